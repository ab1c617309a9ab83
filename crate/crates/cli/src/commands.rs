use std::fmt::Write as _;

use memlearn::automata::suggested_star_delta;
use memlearn::automata::MechanismBlueprint;
use memlearn::chain::{disagreement_probability, evaluate, monte_carlo_occupancy};
use memlearn::diagnostics::{
    diagnose_profile, prop4_losses, star_closed_form, symmetric_utilities,
};
use memlearn::search::{enumerate_deterministic, epsilon_gap, local_search, DEFAULT_BUDGET};
use memlearn::signals::{confirmatory_lotteries, validate};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::spec::{ClosedForm, Loaded, SearchMode, SweepParam};

/// Results of one command: a JSON document, its CSV rendering, extra
/// files that are always written, and the stdout summary.
pub struct Report {
    pub json: Value,
    pub csv: String,
    pub extra: Vec<(String, String)>,
    pub summary: String,
    /// Set when the command ran but its check failed.
    pub failure: Option<String>,
}

impl Report {
    fn new(json: Value, csv: String, summary: String) -> Self {
        Self {
            json,
            csv,
            extra: Vec::new(),
            summary,
            failure: None,
        }
    }
}

pub fn validate_cmd(spec: &Loaded) -> CliResult<Report> {
    let model = spec.model()?;
    let varsigma = spec.spec.varsigma.unwrap_or(0.0);
    if !(0.0..1.0).contains(&varsigma) {
        return Err(CliError::Usage(format!(
            "varsigma must be in [0, 1), got {varsigma}"
        )));
    }
    let r = validate(&model, varsigma);
    let (w, w2, s) = r.min_ratio_at;
    let json = json!({
        "command": "validate",
        "passed": r.passed,
        "states": model.n_states(),
        "alphabet": model.alphabet_size(),
        "varsigma": r.varsigma,
        "min_ratio": r.min_ratio,
        "min_ratio_at": {"state": w, "other_state": w2, "signal": s},
        "identical_rows": r.identical_rows.map(|(a, b)| vec![a, b]),
    });
    let csv = format!(
        "passed,varsigma,min_ratio,state,other_state,signal\n{},{},{},{w},{w2},{s}\n",
        r.passed, r.varsigma, r.min_ratio
    );
    let verdict = if r.passed { "pass" } else { "fail" };
    let summary = format!(
        "validate: {verdict} (min ratio {} vs varsigma {}{})",
        r.min_ratio,
        r.varsigma,
        r.identical_rows
            .map(|(a, b)| format!(", rows {a} and {b} identical"))
            .unwrap_or_default()
    );
    let mut report = Report::new(json, csv, summary.clone());
    if !r.passed {
        report.failure = Some(summary);
    }
    Ok(report)
}

pub fn eval_cmd(spec: &Loaded, seed_flag: Option<u64>) -> CliResult<Report> {
    let problem = spec.problem()?;
    let mech = spec.mechanism(&problem)?;
    let e = evaluate(&problem, &mech)?;
    let diagnostics = diagnose_profile(&problem, &mech, &e.profile)?;
    let mut json = json!({
        "command": "eval",
        "utility": e.utility,
        "loss": e.loss,
        "m_size": mech.m_size(),
        "decision": mech.decision(),
        "occupancy": e.profile.occupancy,
        "periodic_states": e.profile.periodic_states(),
        "diagnostics": diagnostics,
    });
    let mut csv = String::from("state,memory,action,occupancy\n");
    for (w, row) in e.profile.occupancy.iter().enumerate() {
        for (m, mu) in row.iter().enumerate() {
            let _ = writeln!(csv, "{w},{m},{},{mu}", mech.decision()[m]);
        }
    }
    let mut extra = Vec::new();
    if let Some(mc) = &spec.spec.monte_carlo {
        let seed = spec.seed(seed_flag)?;
        let mut runs = Vec::new();
        let mut mc_csv = String::from("state,bucket,memory,frequency\n");
        for w in 0..problem.n_states() {
            let run = monte_carlo_occupancy(&problem, &mech, w, mc.steps, mc.burn_in, seed)?;
            for line in run.to_csv().lines().skip(1) {
                let _ = writeln!(mc_csv, "{w},{line}");
            }
            runs.push(json!({
                "state": w,
                "occupancy": run.occupancy,
                "action_frequencies": run.action_frequencies,
                "total_variation": run.total_variation(&e.profile.occupancy[w]),
            }));
        }
        json["monte_carlo"] =
            json!({"seed": seed, "steps": mc.steps, "burn_in": mc.burn_in, "runs": runs});
        extra.push(("monte_carlo.csv".to_string(), mc_csv));
    }
    let summary = format!("eval: U={} L={} (M={})", e.utility, e.loss, mech.m_size());
    let mut report = Report::new(json, csv, summary);
    report.extra = extra;
    Ok(report)
}

fn as_count(value: f64, what: &str) -> CliResult<usize> {
    if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
        Ok(value as usize)
    } else {
        Err(CliError::Usage(format!(
            "{what} values must be positive integers, got {value}"
        )))
    }
}

pub fn sweep_cmd(spec: &Loaded) -> CliResult<Report> {
    let sweep = spec
        .spec
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Usage("spec has no `sweep`".into()))?;
    if sweep.values.is_empty() {
        return Err(CliError::Usage("sweep values must not be empty".into()));
    }
    let problem = spec.problem()?;
    let (name, rows) = match sweep.param {
        SweepParam::Lambda | SweepParam::Gamma => {
            let base = spec.blueprint()?;
            let mut rows = Vec::new();
            for &v in &sweep.values {
                let bp = vary(&base, sweep.param, v)?;
                let mech = bp.build(problem.model())?;
                let e = evaluate(&problem, &mech)?;
                rows.push((v, mech.m_size(), e.utility, e.loss));
            }
            (
                if sweep.param == SweepParam::Lambda {
                    "lambda"
                } else {
                    "gamma"
                },
                rows,
            )
        }
        SweepParam::M => {
            let budget = sweep.budget.unwrap_or(DEFAULT_BUDGET);
            let mut rows = Vec::new();
            for &v in &sweep.values {
                let m = as_count(v, "m")?;
                let r = enumerate_deterministic(&problem, m, budget)?;
                rows.push((v, m, problem.total_weight() - r.loss, r.loss));
            }
            ("m", rows)
        }
    };
    let mut csv = String::from("param,value,m_size,utility,loss\n");
    for (v, m, u, l) in &rows {
        let _ = writeln!(csv, "{name},{v},{m},{u},{l}");
    }
    let json = json!({
        "command": "sweep",
        "param": name,
        "rows": rows.iter().map(|(v, m, u, l)| json!({"value": v, "m_size": m, "utility": u, "loss": l})).collect::<Vec<_>>(),
    });
    let losses: Vec<String> = rows.iter().map(|r| format!("{:.3e}", r.3)).collect();
    let summary = format!(
        "sweep over {name}: {} points, L = [{}]",
        rows.len(),
        losses.join(", ")
    );
    Ok(Report::new(json, csv, summary))
}

fn vary(base: &MechanismBlueprint, param: SweepParam, v: f64) -> CliResult<MechanismBlueprint> {
    use MechanismBlueprint::*;
    Ok(match (base.clone(), param) {
        (Star { delta, m_size, .. }, SweepParam::Lambda) => Star {
            lam: as_count(v, "lambda")?,
            delta,
            m_size,
        },
        (
            NoisyStar {
                gamma,
                delta,
                m_size,
                ..
            },
            SweepParam::Lambda,
        ) => NoisyStar {
            lam: as_count(v, "lambda")?,
            gamma,
            delta,
            m_size,
        },
        (Star { lam, delta, m_size }, SweepParam::Gamma)
        | (
            NoisyStar {
                lam, delta, m_size, ..
            },
            SweepParam::Gamma,
        ) => NoisyStar {
            lam,
            gamma: v,
            delta,
            m_size,
        },
        _ => {
            return Err(CliError::Usage(
                "lambda and gamma sweeps need a star or noisy_star mechanism".into(),
            ))
        }
    })
}

pub fn disagree_cmd(spec: &Loaded) -> CliResult<Report> {
    let problem = spec.problem()?;
    let a = spec.mechanism(&problem)?;
    let b = spec.mechanism_b(&problem)?;
    let d = disagreement_probability(&problem, &a, &b)?;
    let mut csv = String::from("state,probability,periodic\n");
    for (w, (p, per)) in d.probability.iter().zip(&d.periodic).enumerate() {
        let _ = writeln!(csv, "{w},{p},{per}");
    }
    let json = json!({"command": "disagree", "probability": d.probability, "periodic": d.periodic});
    let summary = format!("disagree: per-state probability {:?}", d.probability);
    Ok(Report::new(json, csv, summary))
}

pub fn closed_forms_cmd(spec: &Loaded) -> CliResult<Report> {
    if spec.spec.closed_forms.is_empty() {
        return Err(CliError::Usage("spec lists no `closed_forms`".into()));
    }
    let mut results = Vec::new();
    let mut csv = String::from("form,key,value\n");
    for form in &spec.spec.closed_forms {
        match *form {
            ClosedForm::Prop4 { nu, tau, ups } => {
                let l = prop4_losses(nu, tau, ups)?;
                for (k, v) in [
                    ("l11", l.l11),
                    ("l22", l.l22),
                    ("l33", l.l33),
                    ("l12", l.l12),
                    ("l13", l.l12),
                    ("l23", l.l23),
                ] {
                    let _ = writeln!(csv, "prop4,{k},{v}");
                }
                let _ = writeln!(csv, "prop4,argmin,{}", l.argmin.label());
                results
                    .push(json!({"form": "prop4", "nu": nu, "tau": tau, "ups": ups, "losses": l}));
            }
            ClosedForm::Symmetric { n, info } => {
                let u = symmetric_utilities(n, info)?;
                let _ = writeln!(csv, "symmetric,u_full,{}", u.full);
                let _ = writeln!(csv, "symmetric,u_ignorant,{}", u.ignorant);
                let _ = writeln!(csv, "symmetric,ignorant_better,{}", u.ignorant_better);
                results.push(json!({"form": "symmetric", "n": n, "info": info, "utilities": u}));
            }
            ClosedForm::Star { lam, delta } => {
                let model = spec.model()?;
                let lotteries = confirmatory_lotteries(&model)?;
                let delta = delta.unwrap_or_else(|| suggested_star_delta(&model, &lotteries));
                let occupancy = (0..model.n_states())
                    .map(|w| star_closed_form(&model, &lotteries, lam, delta, w))
                    .collect::<Result<Vec<_>, _>>()?;
                for (w, row) in occupancy.iter().enumerate() {
                    for (m, mu) in row.iter().enumerate() {
                        let _ = writeln!(csv, "star,mu[{w}][{m}],{mu}");
                    }
                }
                results.push(
                    json!({"form": "star", "lam": lam, "delta": delta, "occupancy": occupancy}),
                );
            }
        }
    }
    let summary = format!("closed-forms: {} table(s)", results.len());
    Ok(Report::new(
        json!({"command": "closed_forms", "results": results}),
        csv,
        summary,
    ))
}

pub fn search_cmd(spec: &Loaded, seed_flag: Option<u64>) -> CliResult<Report> {
    let search = spec
        .spec
        .search
        .as_ref()
        .ok_or_else(|| CliError::Usage("spec has no `search`".into()))?;
    let problem = spec.problem()?;
    let mut result = match search.mode {
        SearchMode::Enumerate => enumerate_deterministic(
            &problem,
            search.config.m_size,
            search.budget.unwrap_or(DEFAULT_BUDGET),
        )?,
        SearchMode::Local => {
            let mut config = search.config.clone();
            config.seed = spec.seed(seed_flag)?;
            local_search(&problem, &config)?
        }
    };
    if let Some(reference) = search.reference_loss {
        result.epsilon_gap = Some(epsilon_gap(&result, reference));
    }
    let trace = result.trace_csv();
    let mode = match search.mode {
        SearchMode::Enumerate => "enumerate",
        SearchMode::Local => "local",
    };
    let json = json!({"command": "search", "mode": mode, "result": result});
    let summary = format!(
        "search ({mode}): L={} decision {:?}",
        result.loss,
        result.mechanism.decision()
    );
    let csv = format!(
        "mode,m_size,loss,epsilon_gap\n{mode},{},{},{}\n",
        result.mechanism.m_size(),
        result.loss,
        result
            .epsilon_gap
            .map(|g| g.to_string())
            .unwrap_or_default()
    );
    let mut report = Report::new(json, csv, summary);
    report.extra.push(("search_trace.csv".to_string(), trace));
    Ok(report)
}
