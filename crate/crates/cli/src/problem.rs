use anyhow::{bail, Context, Result};
use ctrlode::dynamics::{make_bioreactor, ControlProblem, VanDerPol};
use ctrlode::{BioreactorF64, VanDerPolF64};

use crate::config::{ProblemConfig, ProblemKind};

pub enum Problem {
    Vdp(VanDerPolF64),
    Bioreactor(BioreactorF64),
}

impl Problem {
    pub fn as_dyn(&self) -> &dyn ControlProblem<f64> {
        match self {
            Problem::Vdp(p) => p,
            Problem::Bioreactor(p) => p,
        }
    }

    pub fn state_names(&self) -> &'static [&'static str] {
        match self {
            Problem::Vdp(_) => &["x1", "x2"],
            Problem::Bioreactor(_) => &["c_x", "c_n", "c_qc"],
        }
    }

    pub fn control_names(&self) -> &'static [&'static str] {
        match self {
            Problem::Vdp(_) => &["u"],
            Problem::Bioreactor(_) => &["i", "f_n"],
        }
    }
}

fn merged(cfg: &ProblemConfig) -> Result<ProblemConfig> {
    let Some(path) = &cfg.file else {
        return Ok(cfg.clone());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading problem file {}", path.display()))?;
    let base: ProblemConfig = serde_json::from_str(&text).with_context(|| format!("parsing problem file {}", path.display()))?;
    if base.file.is_some() {
        bail!("problem file {} must not reference another file", path.display());
    }
    Ok(ProblemConfig {
        name: base.name,
        file: None,
        tf: cfg.tf.or(base.tf),
        x0: cfg.x0.clone().or(base.x0),
        u_lb: cfg.u_lb.clone().or(base.u_lb),
        u_ub: cfg.u_ub.clone().or(base.u_ub),
        unconstrained: cfg.unconstrained || base.unconstrained,
        x1_min: cfg.x1_min.or(base.x1_min),
        params: cfg.params.or(base.params),
    })
}

fn fill<const N: usize>(what: &str, dst: &mut [f64; N], src: &Option<Vec<f64>>) -> Result<()> {
    if let Some(v) = src {
        if v.len() != N {
            bail!("problem.{what} needs {N} entries, got {}", v.len());
        }
        dst.copy_from_slice(v);
    }
    Ok(())
}

pub fn build(cfg: &ProblemConfig) -> Result<Problem> {
    let cfg = merged(cfg)?;
    let problem = match cfg.name {
        ProblemKind::Vdp => {
            if cfg.params.is_some() {
                bail!("problem.params applies to the bioreactor only");
            }
            let mut p = VanDerPol::new(cfg.x1_min.unwrap_or(-0.4));
            if cfg.unconstrained {
                p = p.unconstrained();
            }
            if let Some(tf) = cfg.tf {
                p.tf = tf;
            }
            fill("x0", &mut p.x0, &cfg.x0)?;
            fill("u_lb", &mut p.u_lb, &cfg.u_lb)?;
            fill("u_ub", &mut p.u_ub, &cfg.u_ub)?;
            Problem::Vdp(p)
        }
        ProblemKind::Bioreactor => {
            if cfg.x1_min.is_some() {
                bail!("problem.x1_min applies to vdp only");
            }
            let mut p = make_bioreactor(cfg.params.unwrap_or_default(), cfg.tf.unwrap_or(240.0));
            if cfg.unconstrained {
                p = p.unconstrained();
            }
            fill("x0", &mut p.x0, &cfg.x0)?;
            fill("u_lb", &mut p.u_lb, &cfg.u_lb)?;
            fill("u_ub", &mut p.u_ub, &cfg.u_ub)?;
            Problem::Bioreactor(p)
        }
    };
    let p = problem.as_dyn();
    if !(p.tf() > p.t0()) {
        bail!("problem.tf must exceed the initial time");
    }
    if p.u_lb().iter().zip(p.u_ub()).any(|(l, u)| !(l < u)) {
        bail!("problem control bounds need u_lb < u_ub");
    }
    Ok(problem)
}
