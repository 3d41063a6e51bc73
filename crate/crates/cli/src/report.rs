//! Test selection, result tables and the results CSV.

use std::io::{self, Write};

use clap::ValueEnum;
use mvpb::bias::{Method, Scope, TestResult};
use mvpb::{Error, TestVariant};

pub const RESULTS_SCHEMA: &str = "# mvpb-test-results v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodChoice {
    Egger,
    Begg,
    Trimfill,
    Rst,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Combine {
    /// Log diagnostic odds ratio `y1 + y2` (logit inputs).
    Logdor,
    Bonferroni,
    None,
}

/// Variants requested on the command line, in reporting order: per-outcome
/// rows always, combined rows on request, and the joint score test.
pub fn select_variants(methods: &[MethodChoice], combine: &[Combine]) -> Vec<TestVariant> {
    let wants = |m: MethodChoice| methods.contains(&m) || methods.contains(&MethodChoice::All);
    let mut out = Vec::new();
    for (choice, method) in [
        (MethodChoice::Egger, Method::Egger),
        (MethodChoice::Begg, Method::Begg),
        (MethodChoice::Trimfill, Method::TrimFill),
    ] {
        if !wants(choice) {
            continue;
        }
        out.push(TestVariant::new(method, Scope::Outcome(0)));
        out.push(TestVariant::new(method, Scope::Outcome(1)));
        if combine.contains(&Combine::Logdor) {
            out.push(TestVariant::new(method, Scope::Combined));
        }
        if combine.contains(&Combine::Bonferroni) {
            out.push(TestVariant::new(method, Scope::Bonferroni));
        }
    }
    if wants(MethodChoice::Rst) {
        out.push(TestVariant::new(Method::Rst, Scope::Joint));
    }
    out
}

/// Remediation advice for method preconditions.
pub fn hint(err: &Error) -> Option<&'static str> {
    match err {
        Error::CovarianceUnavailable { .. } => Some("add a rho_w column or pass --default-rho-w"),
        Error::InsufficientData(_) => Some(
            "too few studies report this outcome; combined-measure tests need complete studies (try --combine none or bonferroni)",
        ),
        Error::DegenerateDesign(_) | Error::DegenerateRanking(_) => {
            Some("the method is undefined when all standard errors (or all effects) coincide")
        }
        Error::BoundaryDegeneracy { .. } => Some("within-study correlations of exactly +/-1 make the covariance singular"),
        Error::NonConvergence { .. } => Some("the REML fit did not converge; check for extreme or duplicated studies"),
        _ => None,
    }
}

fn scope_label(scope: Scope) -> String {
    match scope {
        Scope::Outcome(j) => format!("outcome{}", j + 1),
        Scope::Combined => "combined".into(),
        Scope::Bonferroni => "bonferroni".into(),
        Scope::Joint => "joint".into(),
    }
}

fn method_label(m: Method) -> &'static str {
    match m {
        Method::Egger => "egger",
        Method::Begg => "begg",
        Method::TrimFill => "trimfill",
        Method::Rst => "rst",
    }
}

pub type Row = (TestVariant, Result<TestResult, Error>);

/// Results table for the terminal.
pub fn format_table(rows: &[Row], alpha: f64) -> String {
    let mut s = format!(
        "{:<10} {:>11} {:>10} {:>10} {:>5} {:>4}  {}\n",
        "test", "statistic", "null", "p-value", "n", "excl", "reject"
    );
    for (v, r) in rows {
        match r {
            Ok(t) => s.push_str(&format!(
                "{:<10} {:>11.4} {:>10} {:>10.4} {:>5} {:>4}  {}\n",
                v.name(),
                t.statistic,
                t.null_distribution.to_string(),
                t.p_value,
                t.n_studies,
                t.excluded_partial,
                if t.p_value <= alpha { "yes" } else { "no" }
            )),
            Err(e) => s.push_str(&format!("{:<10} failed: {e}\n", v.name())),
        }
    }
    s
}

pub fn write_results_csv<W: Write>(mut w: W, rows: &[Row], alpha: f64) -> io::Result<()> {
    writeln!(w, "{RESULTS_SCHEMA}")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "test",
        "method",
        "scope",
        "statistic",
        "null_distribution",
        "p_value",
        "n_studies",
        "excluded_partial",
        "alpha",
        "reject",
        "error",
    ])?;
    for (v, r) in rows {
        let head = [v.name(), method_label(v.method).into(), scope_label(v.scope)];
        let tail: [String; 8] = match r {
            Ok(t) => [
                format!("{:.6}", t.statistic),
                t.null_distribution.to_string(),
                format!("{:.6}", t.p_value),
                t.n_studies.to_string(),
                t.excluded_partial.to_string(),
                alpha.to_string(),
                (t.p_value <= alpha).to_string(),
                String::new(),
            ],
            Err(e) => [
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                alpha.to_string(),
                String::new(),
                e.to_string(),
            ],
        };
        out.write_record(head.iter().chain(tail.iter()))?;
    }
    out.flush()
}
