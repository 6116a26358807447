//! The two-buyer uniform benchmark and its five-mechanism summary table.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mechanisms::{MechanismKind, Scenario};
use crate::qfspace::QuantileFunction;
use crate::solvers::{self, SolveMethod, SolveReport, SolverOptions};

pub const BUDGET: f64 = 0.312;
pub const RESERVE: f64 = 0.1;
pub const TABLE_TOL: f64 = 2e-3;

pub const COLUMNS: [MechanismKind; 5] = [
    MechanismKind::Bdfpa,
    MechanismKind::Pfpa,
    MechanismKind::Broa,
    MechanismKind::Bdspa,
    MechanismKind::Pspa,
];

pub const REFERENCE_PAYMENTS: [f64; 5] = [0.312, 0.312, 0.207, 0.171, 0.171];
pub const REFERENCE_REVENUES: [f64; 5] = [0.54, 0.525, 0.344, 0.243, 0.243];
pub const REFERENCE_EXHAUSTED: [bool; 5] = [true, true, false, false, false];

/// Two buyers with uniform values on `[0, 1]`, budget 0.312, reserve 0.1.
pub fn example_scenario() -> Scenario {
    Scenario::symmetric(QuantileFunction::identity(), BUDGET, 2, RESERVE)
        .expect("benchmark scenario is valid")
}

pub fn column_label(kind: MechanismKind) -> &'static str {
    match kind {
        MechanismKind::Bdfpa => "eBDFPA",
        MechanismKind::Pfpa => "ePFPA",
        MechanismKind::Broa => "BROA",
        MechanismKind::Bdspa => "eBDSPA",
        MechanismKind::Pspa => "ePSPA",
    }
}

pub fn default_method(kind: MechanismKind) -> SolveMethod {
    match kind {
        MechanismKind::Bdfpa | MechanismKind::Pfpa => SolveMethod::MaxTuple,
        MechanismKind::Broa => SolveMethod::Dual,
        MechanismKind::Bdspa | MechanismKind::Pspa => SolveMethod::Symmetric,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableColumn {
    pub mechanism: MechanismKind,
    pub label: String,
    pub params: Vec<f64>,
    pub payment: f64,
    pub revenue: f64,
    pub exhausted: bool,
    pub reference_payment: f64,
    pub reference_revenue: f64,
    pub reference_exhausted: bool,
    pub payment_delta: f64,
    pub revenue_delta: f64,
}

impl TableColumn {
    pub fn matches(&self) -> bool {
        self.payment_delta <= TABLE_TOL
            && self.revenue_delta <= TABLE_TOL
            && self.exhausted == self.reference_exhausted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub columns: Vec<TableColumn>,
    pub max_delta: f64,
    pub tolerance: f64,
}

impl SummaryTable {
    pub fn matches(&self) -> bool {
        self.columns.iter().all(TableColumn::matches)
    }
}

fn column(k: usize, report: &SolveReport) -> TableColumn {
    let kind = COLUMNS[k];
    // Buyers are symmetric; report buyer 0.
    let payment = report.payments[0];
    TableColumn {
        mechanism: kind,
        label: column_label(kind).to_string(),
        params: report.params.clone(),
        payment,
        revenue: report.revenue,
        exhausted: report.budget_binding.iter().all(|&b| b),
        reference_payment: REFERENCE_PAYMENTS[k],
        reference_revenue: REFERENCE_REVENUES[k],
        reference_exhausted: REFERENCE_EXHAUSTED[k],
        payment_delta: (payment - REFERENCE_PAYMENTS[k]).abs(),
        revenue_delta: (report.revenue - REFERENCE_REVENUES[k]).abs(),
    }
}

/// Solves all five mechanisms on the benchmark and lines the results up
/// against the published values.
pub fn summary_table(opts: &SolverOptions) -> Result<SummaryTable> {
    let scenario = example_scenario();
    let mut columns = Vec::with_capacity(COLUMNS.len());
    for (k, &kind) in COLUMNS.iter().enumerate() {
        let report = solvers::solve(kind, default_method(kind), &scenario, opts)?;
        columns.push(column(k, &report));
    }
    let max_delta = columns
        .iter()
        .map(|c| c.payment_delta.max(c.revenue_delta))
        .fold(0.0, f64::max);
    Ok(SummaryTable {
        columns,
        max_delta,
        tolerance: TABLE_TOL,
    })
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "Yes"
    } else {
        "No"
    }
}

impl fmt::Display for SummaryTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head = |f: &mut fmt::Formatter<'_>, title: &str| -> fmt::Result {
            write!(f, "{title:<24}")?;
            for c in &self.columns {
                write!(f, "{:>10}", c.label)?;
            }
            writeln!(f)
        };
        let row = |f: &mut fmt::Formatter<'_>, title: &str, get: &dyn Fn(&TableColumn) -> String| {
            write!(f, "{title:<24}")?;
            for c in &self.columns {
                write!(f, "{:>10}", get(c))?;
            }
            writeln!(f)
        };
        head(f, "computed")?;
        row(f, "Each buyer's payment", &|c| format!("{:.4}", c.payment))?;
        row(f, "Seller's revenue", &|c| format!("{:.4}", c.revenue))?;
        row(f, "Budget exhausted?", &|c| yes_no(c.exhausted).to_string())?;
        writeln!(f)?;
        head(f, "reference")?;
        row(f, "Each buyer's payment", &|c| format!("{}", c.reference_payment))?;
        row(f, "Seller's revenue", &|c| format!("{}", c.reference_revenue))?;
        row(f, "Budget exhausted?", &|c| yes_no(c.reference_exhausted).to_string())?;
        writeln!(f)?;
        head(f, "|delta|")?;
        row(f, "Each buyer's payment", &|c| format!("{:.1e}", c.payment_delta))?;
        row(f, "Seller's revenue", &|c| format!("{:.1e}", c.revenue_delta))?;
        row(f, "Budget exhausted?", &|c| {
            if c.exhausted == c.reference_exhausted { "ok" } else { "MISMATCH" }.to_string()
        })?;
        writeln!(f)?;
        write!(
            f,
            "max delta {:.2e} (tolerance {:.0e}): {}",
            self.max_delta,
            self.tolerance,
            if self.matches() { "PASS" } else { "FAIL" }
        )
    }
}
