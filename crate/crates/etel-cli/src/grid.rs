//! Parsing of numeric grid specifications.

/// Parses `start:stop:step` (inclusive of `stop` up to rounding) or a comma
/// separated list of values.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, String> {
    let text = text.trim();
    if text.is_empty() {
        return Err("empty grid".into());
    }
    let num = |s: &str| -> Result<f64, String> {
        let v: f64 = s.trim().parse().map_err(|_| format!("not a number: {s:?}"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("not finite: {s:?}"))
        }
    };
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("range must be start:stop:step, got {text:?}"));
        }
        let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if step <= 0.0 || stop < start {
            return Err(format!("range needs step > 0 and stop >= start, got {text:?}"));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        if count > 1_000_000 {
            return Err("grid has more than 10^6 points".into());
        }
        return Ok((0..count).map(|k| start + k as f64 * step).collect());
    }
    text.split(',').map(num).collect()
}
