use std::fmt::Write as _;
use std::str::FromStr;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Verification passed.
    Ok,
    /// Verification failed; the plant stopped talking to the server.
    Bottom,
    /// No verifier attached.
    NotApplicable,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Ok => "ok",
            Verdict::Bottom => "bottom",
            Verdict::NotApplicable => "n/a",
        }
    }
}

impl FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ok" => Ok(Verdict::Ok),
            "bottom" => Ok(Verdict::Bottom),
            "n/a" => Ok(Verdict::NotApplicable),
            other => Err(format!("unknown verdict {other:?}")),
        }
    }
}

/// One time step as seen on both sides of the network.
///
/// `u` and `y` are plant-side (received input, measured output); `u_c` and
/// `y_c` are controller-side (sent input, received output).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow<T> {
    pub k: i64,
    pub x: Vec<T>,
    pub u: Vec<T>,
    pub y: Vec<T>,
    pub u_c: Vec<T>,
    pub y_c: Vec<T>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTrace<T> {
    pub rows: Vec<TraceRow<T>>,
}

impl<T: Scalar> SimTrace<T> {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row_at(&self, k: i64) -> Option<&TraceRow<T>> {
        self.rows.iter().find(|r| r.k == k)
    }

    /// Whether any step ended in a failed verification.
    pub fn tripped(&self) -> bool {
        self.rows.iter().any(|r| r.verdict == Verdict::Bottom)
    }

    /// CSV with header `k, x1..xn, u1..um, y1..yp, uc1..ucm, yc1..ycp, verdict`
    /// and 12 significant digits per float.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let Some(first) = self.rows.first() else {
            return "k,verdict\n".to_string();
        };
        let mut header = vec!["k".to_string()];
        for (name, len) in [
            ("x", first.x.len()),
            ("u", first.u.len()),
            ("y", first.y.len()),
            ("uc", first.u_c.len()),
            ("yc", first.y_c.len()),
        ] {
            header.extend((1..=len).map(|i| format!("{name}{i}")));
        }
        header.push("verdict".into());
        out.push_str(&header.join(","));
        out.push('\n');
        for r in &self.rows {
            write!(out, "{}", r.k).unwrap();
            for v in r.x.iter().chain(&r.u).chain(&r.y).chain(&r.u_c).chain(&r.y_c) {
                out.push(',');
                out.push_str(&format_sig(v.as_f64(), 12));
            }
            out.push(',');
            out.push_str(r.verdict.as_str());
            out.push('\n');
        }
        out
    }

    /// Parses the output of [`Self::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or("empty trace")?.split(',').collect();
        let count = |prefix: &str| {
            header
                .iter()
                .filter(|h| {
                    h.strip_prefix(prefix)
                        .is_some_and(|rest| rest.chars().all(|c| c.is_ascii_digit()) && !rest.is_empty())
                })
                .count()
        };
        let (n, m, p) = (count("x"), count("u"), count("y"));
        let expected = 1 + n + 2 * m + 2 * p + 1;
        if header.len() != expected {
            return Err(format!("header has {} columns, expected {expected}", header.len()));
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != expected {
                return Err(format!("line {}: {} fields, expected {expected}", lineno + 2, f.len()));
            }
            let k = f[0].parse::<i64>().map_err(|e| format!("line {}: {e}", lineno + 2))?;
            let nums = f[1..expected - 1]
                .iter()
                .map(|s| s.parse::<f64>().map(T::lit))
                .collect::<Result<Vec<T>, _>>()
                .map_err(|e| format!("line {}: {e}", lineno + 2))?;
            let mut it = nums.into_iter();
            let mut take = |len: usize| it.by_ref().take(len).collect::<Vec<T>>();
            rows.push(TraceRow {
                k,
                x: take(n),
                u: take(m),
                y: take(p),
                u_c: take(m),
                y_c: take(p),
                verdict: f[expected - 1].parse()?,
            });
        }
        Ok(Self { rows })
    }
}

/// `printf("%.{digits}g")`-style formatting.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        format!("{mantissa}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
