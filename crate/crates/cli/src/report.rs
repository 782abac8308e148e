//! Plain-text tables for fit and inference reports.

use std::fmt::Write;

use romkit::inference::InferenceReport;
use romkit::meta::ModelReport;

fn stars(p: f64) -> &'static str {
    match p {
        p if p < 0.001 => "***",
        p if p < 0.01 => "**",
        p if p < 0.05 => "*",
        p if p < 0.1 => ".",
        _ => "",
    }
}

fn p_text(p: f64) -> String {
    if p < 0.001 {
        "<0.001".into()
    } else {
        format!("{p:.3}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

pub fn model_table(r: &ModelReport<f64>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Outcome: {}   structure {}   rows {}", r.outcome, r.structure, r.n_rows);
    let _ = writeln!(s, "{:<12} {:>10} {:>10} {:>9} {:>9}", "term", "estimate", "se", "z", "p");
    for f in &r.fixed_effects {
        let _ = writeln!(
            s,
            "{:<12} {:>10.3} {:>10.3} {:>9.3} {:>9} {}",
            f.name,
            f.est,
            f.se,
            f.z,
            p_text(f.p),
            stars(f.p)
        );
    }
    let _ = writeln!(
        s,
        "participant  tau_p2 {:.3}  tau_q2 {}  xi {}",
        r.participant.tau_p2,
        opt(r.participant.tau_q2),
        opt(r.participant.xi)
    );
    let _ = writeln!(
        s,
        "exercise     tau_u2 {:.3}  tau_v2 {}  rho {}",
        r.exercise.tau_u2,
        opt(r.exercise.tau_v2),
        opt(r.exercise.rho)
    );
    let _ = writeln!(s, "logLik {:.3}  AIC {:.3}  BIC {:.3}", r.loglik, r.aic, r.bic);
    let _ = writeln!(
        s,
        "Q_E({}) {:.2} p {}   Q_M({}) {:.2} p {}",
        r.qe.df,
        r.qe.stat,
        p_text(r.qe.p),
        r.qm.df,
        r.qm.stat,
        p_text(r.qm.p)
    );
    if !r.converged {
        let _ = writeln!(s, "warning: optimizer did not reach the gradient tolerance");
    }
    s
}

pub fn inference_tables(r: &InferenceReport<f64>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Likelihood-ratio tests of covariance structure (df 1)");
    let _ = writeln!(s, "{:<20} {:<10} {:>10} {:>9}", "outcome", "test", "Lambda", "p");
    for o in &r.outcomes {
        for l in &o.lrt {
            let _ = writeln!(
                s,
                "{:<20} {:<10} {:>10.3} {:>9} {}",
                o.outcome,
                l.symbol,
                l.lambda,
                p_text(l.p_value),
                stars(l.p_value)
            );
        }
    }
    let _ = writeln!(s, "\nParametric bootstrap contrasts (B = {}, one-sided)", r.bootstrap_b);
    let _ = writeln!(
        s,
        "{:<20} {:<12} {:>10} {:>21} {:>9}",
        "outcome", "contrast", "estimate", "95% CI", "p"
    );
    for o in &r.outcomes {
        for c in &o.contrasts {
            let kind = serde_json::to_value(c.kind)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            let ci = format!("[{:.3}, {:.3}]", c.ci_low, c.ci_high);
            let _ = writeln!(
                s,
                "{:<20} {:<12} {:>10.3} {:>21} {:>9} {}",
                o.outcome,
                kind,
                c.estimate,
                ci,
                p_text(c.p_one_sided),
                stars(c.p_one_sided)
            );
            if let Some(w) = &c.warning {
                let _ = writeln!(s, "  warning: {w}");
            }
        }
    }
    if let Some(p) = &r.percent_rom {
        let _ = writeln!(s, "\n%ROM by exercise (log-ROM model, two-sided bootstrap p, BH-adjusted)");
        let _ = writeln!(s, "{:<28} {:>7} {:>17} {:>9} {:>9}", "exercise", "%ROM", "95% CI", "p", "p_BH");
        for e in &p.per_exercise {
            let ci = format!("[{:.1}, {:.1}]", e.ci_low, e.ci_high);
            let _ = writeln!(
                s,
                "{:<28} {:>7.1} {:>17} {:>9} {:>9} {}",
                e.exercise,
                e.pct_rom_e,
                ci,
                p_text(e.p_raw),
                p_text(e.p_bh),
                stars(e.p_bh)
            );
        }
        let ci = format!("[{:.1}, {:.1}]", p.overall_ci_low, p.overall_ci_high);
        let _ = writeln!(s, "{:<28} {:>7.1} {:>17}", "overall", p.overall_pct_rom, ci);
    }
    s
}
