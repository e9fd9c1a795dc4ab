//! Truncation-level planning tables over grids of concentrations and sample sizes.

use edpm_core::truncation::{compare_fixed, AlphaSchedule, ErrorBudget, PlanReport};

use crate::error::Result;

/// One `(α^θ, α^{ψ|θ})` row of a planning grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub alpha_theta: f64,
    pub alpha_psi: AlphaSchedule,
    /// How the ψ concentrations are printed, e.g. `(0.5,1,1.5,...)`.
    pub label: String,
}

/// The four rows of the reference grid, with the elided concentration
/// sequences extended as constant, arithmetic and triangular.
pub fn reference_grid() -> Vec<GridRow> {
    vec![
        GridRow {
            alpha_theta: 0.5,
            alpha_psi: AlphaSchedule::Constant(0.5),
            label: "(0.5,0.5,0.5,...)".into(),
        },
        GridRow {
            alpha_theta: 0.5,
            alpha_psi: AlphaSchedule::Arithmetic { first: 0.5, step: 0.5 },
            label: "(0.5,1,1.5,...)".into(),
        },
        GridRow {
            alpha_theta: 1.0,
            alpha_psi: AlphaSchedule::Triangular { scale: 0.5 },
            label: "(0.5,1.5,3,...)".into(),
        },
        GridRow {
            alpha_theta: 3.0,
            alpha_psi: AlphaSchedule::Triangular { scale: 0.5 },
            label: "(0.5,1.5,3,...)".into(),
        },
    ]
}

pub const REFERENCE_SAMPLE_SIZES: [usize; 2] = [200, 1000];

pub fn reference_budget() -> ErrorBudget {
    ErrorBudget::new(0.01, 0.001).expect("valid reference budget")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanCell {
    pub label: String,
    pub report: PlanReport,
}

pub fn plan_grid(rows: &[GridRow], budget: &ErrorBudget, ns: &[usize]) -> Result<Vec<PlanCell>> {
    let mut cells = Vec::with_capacity(rows.len() * ns.len());
    for row in rows {
        for &n in ns {
            cells.push(PlanCell {
                label: row.label.clone(),
                report: compare_fixed(n, row.alpha_theta, &row.alpha_psi, budget)?,
            });
        }
    }
    Ok(cells)
}

/// Aligned text table: one line per `(row, n)` cell, first three `M_k` shown.
pub fn format_plan_table(cells: &[PlanCell]) -> String {
    let header = [
        "alpha_theta", "alpha_psi", "n", "N", "M_1..M_3", "k*", "bound_tv", "sum_M", "fixed_M", "N*M",
    ];
    let rows: Vec<[String; 10]> = cells
        .iter()
        .map(|c| {
            let r = &c.report;
            let shown: Vec<String> = r.levels.m_all().iter().take(3).map(usize::to_string).collect();
            let more = if r.levels.n_theta() > 3 { ",..." } else { "" };
            [
                r.alpha_theta.to_string(),
                c.label.clone(),
                r.n.to_string(),
                r.levels.n_theta().to_string(),
                format!("({}{more})", shown.join(",")),
                (r.k_star + 1).to_string(),
                format!("{:.3e}", r.bound_tv),
                r.sum_m.to_string(),
                r.fixed_m.to_string(),
                r.fixed_pairs().to_string(),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in &rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    for r in &rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

pub fn plan_table(rows: &[GridRow], budget: &ErrorBudget, ns: &[usize]) -> Result<String> {
    Ok(format_plan_table(&plan_grid(rows, budget, ns)?))
}
