//! Number rendering and the `%` / `str.format` mini-languages.

/// Shortest round-tripping float text, laid out the way Python's `repr` does.
pub fn float_repr(f: f64) -> String {
    if f.is_nan() {
        return "nan".into();
    }
    if f.is_infinite() {
        return if f > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if f == 0.0 {
        return if f.is_sign_negative() {
            "-0.0".into()
        } else {
            "0.0".into()
        };
    }
    // `{:e}` yields the shortest digits that round-trip, e.g. "1.2345e4"
    let sci = format!("{:e}", f);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("exponent digits");
    let neg = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let mut out = String::new();
    if neg {
        out.push('-');
    }
    if (-4..16).contains(&exp) {
        if exp >= 0 {
            let int_len = exp as usize + 1;
            if digits.len() <= int_len {
                out.push_str(&digits);
                out.extend(std::iter::repeat_n('0', int_len - digits.len()));
                out.push_str(".0");
            } else {
                out.push_str(&digits[..int_len]);
                out.push('.');
                out.push_str(&digits[int_len..]);
            }
        } else {
            out.push_str("0.");
            out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
            out.push_str(&digits);
        }
    } else {
        out.push_str(&digits[..1]);
        if digits.len() > 1 {
            out.push('.');
            out.push_str(&digits[1..]);
        }
        out.push('e');
        out.push(if exp < 0 { '-' } else { '+' });
        out.push_str(&format!("{:02}", exp.abs()));
    }
    out
}

/// Parsed `[[fill]align][sign][0][width][,][.precision][type]`.
#[derive(Debug, Default, Clone)]
pub struct Spec {
    pub fill: Option<char>,
    pub align: Option<char>,
    pub sign: Option<char>,
    pub zero: bool,
    pub width: usize,
    pub grouping: bool,
    pub precision: Option<usize>,
    pub ty: Option<char>,
}

pub fn parse_spec(s: &str) -> Result<Spec, String> {
    let chars: Vec<char> = s.chars().collect();
    let mut i = 0;
    let mut spec = Spec::default();
    let is_align = |c: char| matches!(c, '<' | '>' | '^' | '=');
    if chars.len() >= 2 && is_align(chars[1]) {
        spec.fill = Some(chars[0]);
        spec.align = Some(chars[1]);
        i = 2;
    } else if !chars.is_empty() && is_align(chars[0]) {
        spec.align = Some(chars[0]);
        i = 1;
    }
    if i < chars.len() && matches!(chars[i], '+' | '-' | ' ') {
        spec.sign = Some(chars[i]);
        i += 1;
    }
    if i < chars.len() && chars[i] == '0' {
        spec.zero = true;
        i += 1;
    }
    let start = i;
    while i < chars.len() && chars[i].is_ascii_digit() {
        i += 1;
    }
    if i > start {
        spec.width = chars[start..i]
            .iter()
            .collect::<String>()
            .parse()
            .map_err(|_| "bad width")?;
    }
    if i < chars.len() && chars[i] == ',' {
        spec.grouping = true;
        i += 1;
    }
    if i < chars.len() && chars[i] == '.' {
        i += 1;
        let start = i;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
        spec.precision = Some(
            chars[start..i]
                .iter()
                .collect::<String>()
                .parse()
                .map_err(|_| "format precision missing")?,
        );
    }
    if i < chars.len() {
        spec.ty = Some(chars[i]);
        i += 1;
    }
    if i != chars.len() {
        return Err(format!("invalid format specifier '{s}'"));
    }
    Ok(spec)
}

/// A number as seen by the formatter.
#[derive(Debug, Clone, Copy)]
pub enum Num {
    Int(i64),
    Float(f64),
}

fn exp_format(f: f64, prec: usize, upper: bool) -> String {
    let s = format!("{:.*e}", prec, f);
    let (m, e) = s.split_once('e').unwrap();
    let e: i32 = e.parse().unwrap();
    let mut out = format!(
        "{m}{}{}{:02}",
        if upper { 'E' } else { 'e' },
        if e < 0 { '-' } else { '+' },
        e.abs()
    );
    if f.is_nan() || f.is_infinite() {
        out = float_repr(f);
    }
    out
}

fn general_format(f: f64, prec: usize, alt_repr: bool) -> String {
    if f.is_nan() || f.is_infinite() {
        return float_repr(f);
    }
    let p = prec.max(1);
    if f == 0.0 {
        return if f.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let exp = f.abs().log10().floor() as i32;
    // rounding may bump the exponent; recompute from the e-format
    let e_text = format!("{:.*e}", p - 1, f);
    let exp = e_text
        .split_once('e')
        .map(|(_, e)| e.parse::<i32>().unwrap())
        .unwrap_or(exp);
    let mut s = if exp < -4 || exp >= p as i32 {
        let t = exp_format(f, p - 1, false);
        let (m, e) = t.split_once('e').unwrap();
        let m = if m.contains('.') {
            m.trim_end_matches('0').trim_end_matches('.')
        } else {
            m
        };
        format!("{m}e{e}")
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        let t = format!("{:.*}", decimals, f);
        if t.contains('.') {
            t.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            t
        }
    };
    if alt_repr && !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("nan") {
        s.push_str(".0");
    }
    s
}

fn group_thousands(digits: &str) -> String {
    let (int, frac) = match digits.find('.') {
        Some(i) => (&digits[..i], &digits[i..]),
        None => (digits, ""),
    };
    let mut out = String::new();
    for (i, c) in int.chars().enumerate() {
        if i > 0 && (int.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out + frac
}

pub fn format_number(n: Num, spec: &Spec) -> Result<String, String> {
    let ty = spec.ty;
    let (neg, body) = match (n, ty) {
        (Num::Int(i), None | Some('d') | Some('n')) => (i < 0, i.unsigned_abs().to_string()),
        (Num::Int(i), Some('x')) => (i < 0, format!("{:x}", i.unsigned_abs())),
        (Num::Int(i), Some('b')) => (i < 0, format!("{:b}", i.unsigned_abs())),
        (Num::Float(_), Some('d')) => return Err("Unknown format code 'd' for object of type 'float'".into()),
        (n, ty) => {
            let f = match n {
                Num::Int(i) => i as f64,
                Num::Float(f) => f,
            };
            let neg = f.is_sign_negative() && !f.is_nan();
            let a = f.abs();
            let body = match ty {
                Some('f') | Some('F') => format!("{:.*}", spec.precision.unwrap_or(6), a),
                Some('e') | Some('E') => exp_format(a, spec.precision.unwrap_or(6), ty == Some('E')),
                Some('g') | Some('G') => general_format(a, spec.precision.unwrap_or(6), false),
                Some('%') => format!("{:.*}%", spec.precision.unwrap_or(6), a * 100.0),
                None => match spec.precision {
                    Some(p) => general_format(a, p, true),
                    None => float_repr(a),
                },
                Some(c) => return Err(format!("Unknown format code '{c}' for object of type 'float'")),
            };
            (neg, body)
        }
    };
    let body = if spec.grouping { group_thousands(&body) } else { body };
    let sign = if neg {
        "-"
    } else {
        match spec.sign {
            Some('+') => "+",
            Some(' ') => " ",
            _ => "",
        }
    };
    let len = sign.chars().count() + body.chars().count();
    if spec.width <= len {
        return Ok(format!("{sign}{body}"));
    }
    let padn = spec.width - len;
    if spec.zero && spec.align.is_none() || spec.align == Some('=') {
        let fill = spec.fill.unwrap_or(if spec.zero { '0' } else { ' ' });
        return Ok(format!("{sign}{}{body}", fill.to_string().repeat(padn)));
    }
    Ok(align(&format!("{sign}{body}"), spec, '>', padn))
}

pub fn format_str(s: &str, spec: &Spec) -> Result<String, String> {
    if let Some(t) = spec.ty {
        if t != 's' {
            return Err(format!("Unknown format code '{t}' for object of type 'str'"));
        }
    }
    let s: String = match spec.precision {
        Some(p) => s.chars().take(p).collect(),
        None => s.to_string(),
    };
    let len = s.chars().count();
    if spec.width <= len {
        return Ok(s);
    }
    Ok(align(&s, spec, '<', spec.width - len))
}

fn align(s: &str, spec: &Spec, default: char, padn: usize) -> String {
    let fill = spec.fill.unwrap_or(' ').to_string();
    match spec.align.unwrap_or(default) {
        '<' => format!("{s}{}", fill.repeat(padn)),
        '^' => format!("{}{s}{}", fill.repeat(padn / 2), fill.repeat(padn - padn / 2)),
        _ => format!("{}{s}", fill.repeat(padn)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_repr_matches_python_layout() {
        assert_eq!(float_repr(1.0), "1.0");
        assert_eq!(float_repr(0.1), "0.1");
        assert_eq!(float_repr(1e-5), "1e-05");
        assert_eq!(float_repr(0.0001), "0.0001");
        assert_eq!(float_repr(1e16), "1e+16");
        assert_eq!(float_repr(123456789012345.0), "123456789012345.0");
        assert_eq!(float_repr(-2.5), "-2.5");
        assert_eq!(float_repr(1.5e300), "1.5e+300");
        assert_eq!(float_repr(0.30000000000000004), "0.30000000000000004");
    }

    #[test]
    fn number_specs() {
        let f = |n, s: &str| format_number(n, &parse_spec(s).unwrap()).unwrap();
        assert_eq!(f(Num::Float(1.23456), ".2f"), "1.23");
        assert_eq!(f(Num::Float(1.23456), "8.3f"), "   1.235");
        assert_eq!(f(Num::Int(42), "05d"), "00042");
        assert_eq!(f(Num::Int(-42), "5"), "  -42");
        assert_eq!(f(Num::Float(0.000123), ".3g"), "0.000123");
        assert_eq!(f(Num::Float(1234567.0), ".3g"), "1.23e+06");
        assert_eq!(f(Num::Float(0.5), ".1%"), "50.0%");
        assert_eq!(f(Num::Float(12345.678), ".2e"), "1.23e+04");
        assert_eq!(f(Num::Int(1234567), ","), "1,234,567");
        assert_eq!(f(Num::Float(-0.5), ".1f"), "-0.5");
    }

    #[test]
    fn string_specs() {
        assert_eq!(format_str("ab", &parse_spec(">4").unwrap()).unwrap(), "  ab");
        assert_eq!(format_str("ab", &parse_spec("*^6").unwrap()).unwrap(), "**ab**");
        assert_eq!(format_str("abcdef", &parse_spec(".3").unwrap()).unwrap(), "abc");
    }
}
