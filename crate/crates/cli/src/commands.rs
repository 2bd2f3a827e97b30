//! The experiment subcommands. Each turns a configuration into tables and a
//! summary record; writing them is left to the caller.

use erw_core::cuts::{palm_t_moments, return_probability, LazyWalkSpec, ReturnMethod};
use erw_core::environment::Field;
use erw_core::estimators::{
    coupled_derivative, derivative_at_zero, derivative_v_m_beta, range_constant, speed_cut_ratio, speed_girsanov_sweep,
    speed_lln,
};
use erw_core::oracle::{enumerate, PathLaw};
use erw_core::walker::simulate_direct;
use thiserror::Error;

use crate::config::{ConfigError, DerivativeKind, EnvKind, ExperimentConfig, LawSpec};
use crate::record::{estimate_row, Quantity, ResultRecord, Table, ESTIMATE_COLUMNS};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] erw_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

pub type Output = (ResultRecord, Vec<Table>);

fn num(x: f64) -> String {
    x.to_string()
}

/// One trajectory of `horizon` steps under the direct rule.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let env = cfg.environment()?;
    let traj = simulate_direct(&env, cfg.d, cfg.horizon, cfg.seed_spec())?;
    let mut buf = Vec::new();
    traj.write_csv(&mut buf)?;
    let text = String::from_utf8(buf).expect("ascii output");
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let mut table = Table::new("trajectory", &header);
    for line in lines {
        table.push(cfg, line.split(',').map(str::to_string).collect());
    }
    Ok((ResultRecord::new("simulate", cfg), vec![table]))
}

/// Speed by long runs and, for `d >= 3`, by the cut-time ratio.
pub fn speed(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let env = cfg.environment()?;
    let opts = cfg.run_options();
    let seed = cfg.seed_spec();
    let mut record = ResultRecord::new("speed", cfg);
    let mut table = Table::new("speed", ESTIMATE_COLUMNS);
    let lln = speed_lln(&env, cfg.d, cfg.horizon, cfg.replicates, seed.child(0), &opts)?;
    table.push(cfg, estimate_row(&lln));
    record.estimates.push(lln);
    if cfg.d >= 3 {
        let cut = speed_cut_ratio(&env, cfg.d, cfg.window(), cfg.replicates, seed.child(1), &opts)?;
        table.push(cfg, estimate_row(&cut.speed));
        record.quantities.push(Quantity::new("palm_mean_t", cut.palm_t));
        record.quantities.push(Quantity::new("p_cut", cut.p_cut));
        record.estimates.push(cut.speed);
    }
    Ok((record, vec![table]))
}

/// Girsanov speed over the `betas` grid, both numerator forms.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let opts = cfg.run_options();
    let res = speed_girsanov_sweep(cfg.d, cfg.m, &cfg.betas, cfg.window(), cfg.replicates, cfg.seed_spec(), &opts)?;
    let mut record = ResultRecord::new("sweep", cfg);
    let mut table = Table::new(
        "sweep",
        &[
            "d",
            "m",
            "beta",
            "product",
            "product_stderr",
            "numerator",
            "numerator_stderr",
            "ess",
            "ess_ok",
            "denominator",
            "denominator_stderr",
            "replicates",
            "window",
            "truncation_rate",
        ],
    );
    for p in &res.points {
        table.push(
            cfg,
            vec![
                cfg.d.to_string(),
                cfg.m.to_string(),
                num(p.beta),
                num(p.product.value),
                num(p.product.stderr),
                num(p.numerator.value),
                num(p.numerator.stderr),
                num(p.ess),
                p.ess_ok.to_string(),
                num(res.denominator.value),
                num(res.denominator.stderr),
                res.replicates.to_string(),
                cfg.window.to_string(),
                num(res.truncation_rate),
            ],
        );
        record.estimates.push(p.product.clone());
        record.estimates.push(p.numerator.clone());
    }
    record.quantities.push(Quantity::new("denominator", res.denominator));
    Ok((record, vec![table]))
}

pub fn derivative(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let opts = cfg.run_options();
    let seed = cfg.seed_spec();
    let window = cfg.window();
    let mut record = ResultRecord::new("derivative", cfg);
    let mut table = Table::new("derivative", ESTIMATE_COLUMNS);
    match cfg.derivative {
        DerivativeKind::AtZero => {
            let e = derivative_at_zero(cfg.d, window, cfg.replicates, seed, &opts)?;
            table.push(cfg, estimate_row(&e));
            record.estimates.push(e);
        }
        DerivativeKind::MBeta => {
            let r = derivative_v_m_beta(cfg.d, cfg.m, cfg.beta, window, cfg.replicates, seed, &opts)?;
            table.push(cfg, estimate_row(&r.estimate));
            record.quantities.push(Quantity::new("first_term", r.first));
            record.quantities.push(Quantity::new("second_term", r.second));
            record.estimates.push(r.estimate);
        }
        DerivativeKind::Coupled => {
            if cfg.env != EnvKind::Pair {
                return Err(CliError::Usage("the coupled derivative needs `env = pair`".into()));
            }
            let pair = cfg.environment()?;
            let r = coupled_derivative(&pair, cfg.t, cfg.d, window, cfg.replicates, cfg.env_draws, seed, &opts)?;
            table.push(cfg, estimate_row(&r.estimate));
            for (name, e) in [
                ("first_term", r.first),
                ("second_term", r.second),
                ("second_term_before", r.second_before),
                ("second_term_after", r.second_after),
                ("first_term_lower_bound", r.first_lower_bound),
            ] {
                record.quantities.push(Quantity::new(name, e));
            }
            record.quantities.push(Quantity {
                name: "between_variance".into(),
                estimate: r.between_variance,
                stderr: 0.0,
            });
            record.quantities.push(Quantity {
                name: "within_variance".into(),
                estimate: r.within_variance,
                stderr: 0.0,
            });
            record.estimates.push(r.estimate);
        }
    }
    Ok((record, vec![table]))
}

/// Cut-time moments of the vertical walk of `Z^d` and the identities tying
/// them together.
pub fn cut_moments(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let spec = LazyWalkSpec::vertical_of(cfg.d)?;
    let pm = palm_t_moments(
        spec,
        cfg.window(),
        cfg.replicates,
        cfg.replicates,
        cfg.seed_spec(),
        cfg.max_attempts,
        cfg.threads,
    )?;
    let p = pm.p_cut();
    let palm_t = pm.palm_moment(1);
    let palm_t2 = pm.palm_moment(2);
    let et = pm.t_unconditioned();
    let half_t2_t = {
        let xs: Vec<f64> = pm.palm_t().iter().map(|t| 0.5 * (t * t + t)).collect();
        erw_core::stats::mean_estimate(&xs)
    };
    let rows = [
        ("p_cut", p),
        ("p_cut_acceptance", pm.p_cut_from_acceptance()),
        ("palm_t", palm_t),
        ("palm_t2", palm_t2),
        ("palm_t3", pm.palm_moment(3)),
        ("t_on_cut", pm.t_on_cut()),
        ("t_unconditioned", et),
        ("palm_t_times_p_cut", palm_t.times(p)),
        ("palm_t_times_t", palm_t.times(et)),
        ("palm_half_t2_plus_t", half_t2_t),
    ];
    let mut record = ResultRecord::new("cut-moments", cfg);
    let mut table = Table::new(
        "cut_moments",
        &["quantity", "d", "window", "replicates", "estimate", "stderr", "truncation_rate"],
    );
    let trunc = pm.truncation_rate();
    for (name, e) in rows {
        table.push(
            cfg,
            vec![
                name.into(),
                cfg.d.to_string(),
                cfg.window.to_string(),
                cfg.replicates.to_string(),
                num(e.value),
                num(e.stderr),
                num(trunc),
            ],
        );
        record.quantities.push(Quantity::new(name, e));
    }
    Ok((record, vec![table]))
}

/// Range constant of the simple walk; the Palm route runs when `d >= 6`.
pub fn range(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let opts = cfg.run_options();
    let palm = (cfg.d >= 6).then(|| (cfg.window(), cfg.replicates));
    let r = range_constant(cfg.d, cfg.horizon, cfg.replicates, palm, cfg.seed_spec(), &opts)?;
    let mut record = ResultRecord::new("range", cfg);
    let mut table = Table::new("range", ESTIMATE_COLUMNS);
    table.push(cfg, estimate_row(&r.lln));
    record.quantities.push(Quantity::new("n_statistic_over_n", r.n_statistic));
    record.estimates.push(r.lln);
    if let Some(p) = r.palm {
        table.push(cfg, estimate_row(&p));
        record.estimates.push(p);
    }
    Ok((record, vec![table]))
}

/// Exact `P(Z^eps_k = 0)` on `Z^dim` for `k = 0..=n`.
pub fn return_prob(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let mut table = Table::new("return_prob", &["dim", "eps", "n", "probability", "method"]);
    for k in 0..=cfg.n {
        let (p, method) = return_probability(cfg.dim, cfg.eps, k)?;
        let method = match method {
            ReturnMethod::Convolution => "convolution",
            ReturnMethod::Quadrature => "quadrature",
        };
        table.push(
            cfg,
            vec![
                cfg.dim.to_string(),
                num(cfg.eps),
                k.to_string(),
                format!("{p:.11e}"),
                method.into(),
            ],
        );
    }
    Ok((ResultRecord::new("return-prob", cfg), vec![table]))
}

/// Exact law of `n`-step paths. An i.i.d. field with a discrete law gives
/// the annealed law; any other environment gives the quenched law of the
/// configured field.
pub fn oracle(cfg: &ExperimentConfig) -> Result<Output, CliError> {
    let env = cfg.environment()?;
    let atoms = match (cfg.env, &cfg.law, env.field()) {
        (EnvKind::Iid, LawSpec::Discrete(_), Field::IidLazy { .. }) => {
            let law = cfg.stack_law(&cfg.law)?;
            enumerate(cfg.d, cfg.n, PathLaw::AnnealedIid(&law))?
        }
        _ => enumerate(cfg.d, cfg.n, PathLaw::Quenched(&env))?,
    };
    let mut table = Table::new("oracle", &["d", "n", "path", "probability"]);
    for a in &atoms {
        let path: Vec<String> = a
            .moves()
            .iter()
            .map(|dir| format!("{}e{}", if dir.sign > 0 { '+' } else { '-' }, dir.axis + 1))
            .collect();
        table.push(
            cfg,
            vec![cfg.d.to_string(), cfg.n.to_string(), path.join(" "), format!("{:.17e}", a.probability)],
        );
    }
    Ok((ResultRecord::new("oracle", cfg), vec![table]))
}
