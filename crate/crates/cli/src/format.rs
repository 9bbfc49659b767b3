//! Number formatting for report and archive files.

/// `v` rounded to six significant digits; see [`sig`].
pub fn sig6(v: f64) -> String {
    sig(v, 6)
}

/// `v` rounded to `digits` significant digits, without trailing zeros; plain
/// notation for exponents in `-5..digits`, scientific otherwise.
pub fn sig(v: f64, digits: usize) -> String {
    assert!(digits >= 1, "at least one significant digit");
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.*e}", digits - 1);
    let (mantissa, exp) = sci.split_once('e').expect("`e` formatting always has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if (-5..digits as i32).contains(&exp) {
        trim_zeros(format!("{:.*}", (digits as i32 - 1 - exp) as usize, v))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Shortest representation that parses back to the same `f64`.
pub fn exact(v: f64) -> String {
    format!("{v:?}")
}
