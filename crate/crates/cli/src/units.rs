//! Human-friendly quantities on the command line.

/// Parse a count with an optional `K`, `M` or `G` suffix: `600M`, `3.4G`,
/// `458200000`, `1.5e9`.
pub fn parse_scaled(text: &str) -> Result<f64, String> {
    let t = text.trim();
    let (number, scale) = match t.chars().last() {
        Some('k' | 'K') => (&t[..t.len() - 1], 1e3),
        Some('m' | 'M') => (&t[..t.len() - 1], 1e6),
        Some('g' | 'G') => (&t[..t.len() - 1], 1e9),
        _ => (t, 1.0),
    };
    let v: f64 = number.trim().parse().map_err(|_| format!("not a number: {text:?}"))?;
    let v = v * scale;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be positive and finite: {text:?}"))
    }
}

pub fn parse_positive(text: &str) -> Result<f64, String> {
    match text.trim().parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("must be a positive number: {text:?}")),
    }
}
