use serde::Serialize;

/// One line of a verification table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub quantity: String,
    pub exact: f64,
    pub estimate: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckRow {
    /// Passes when the relative error `|est − exact| / max(|exact|, tiny)`
    /// is within `tolerance`.
    pub fn relative(quantity: impl Into<String>, exact: f64, estimate: f64, tolerance: f64) -> Self {
        let abs_error = (estimate - exact).abs();
        let rel_error = abs_error / exact.abs().max(f64::MIN_POSITIVE);
        Self {
            quantity: quantity.into(),
            exact,
            estimate,
            abs_error,
            rel_error,
            tolerance,
            pass: rel_error <= tolerance,
        }
    }

    /// Passes when `|est − exact| ≤ tolerance`. The relative error falls
    /// back to the absolute one when `exact` is zero.
    pub fn absolute(quantity: impl Into<String>, exact: f64, estimate: f64, tolerance: f64) -> Self {
        let abs_error = (estimate - exact).abs();
        Self {
            quantity: quantity.into(),
            exact,
            estimate,
            abs_error,
            rel_error: relative_or_absolute(abs_error, exact),
            tolerance,
            pass: abs_error <= tolerance,
        }
    }

    /// Passes when `estimate ≤ bound + tolerance`.
    pub fn upper_bound(quantity: impl Into<String>, bound: f64, estimate: f64, tolerance: f64) -> Self {
        let abs_error = (estimate - bound).max(0.0);
        Self {
            quantity: quantity.into(),
            exact: bound,
            estimate,
            abs_error,
            rel_error: relative_or_absolute(abs_error, bound),
            tolerance,
            pass: estimate <= bound + tolerance,
        }
    }

    pub fn flag(quantity: impl Into<String>, pass: bool) -> Self {
        Self {
            quantity: quantity.into(),
            exact: 1.0,
            estimate: if pass { 1.0 } else { 0.0 },
            abs_error: if pass { 0.0 } else { 1.0 },
            rel_error: if pass { 0.0 } else { 1.0 },
            tolerance: 0.0,
            pass,
        }
    }
}

fn relative_or_absolute(abs_error: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        abs_error
    } else {
        abs_error / reference.abs()
    }
}

/// Fixed-width text rendering of a check table.
pub fn render_table(rows: &[CheckRow]) -> String {
    let width = rows.iter().map(|r| r.quantity.len()).max().unwrap_or(8).max(8);
    let mut out = format!(
        "{:<width$}  {:>14}  {:>14}  {:>10}  {:>10}  {:>9}  result\n",
        "quantity", "exact", "estimate", "abs_err", "rel_err", "tol"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>14.8e}  {:>14.8e}  {:>10.3e}  {:>10.3e}  {:>9.1e}  {}\n",
            r.quantity,
            r.exact,
            r.estimate,
            r.abs_error,
            r.rel_error,
            r.tolerance,
            if r.pass { "PASS" } else { "FAIL" }
        ));
    }
    out
}
