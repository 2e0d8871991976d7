//! Parsers for the short textual specs used on the command line:
//! maps (`sine:a=0.1,j=2`), test functions (`syl:0.3`), fields
//! (`poly:x(1-x)^2`).

use entropic_flow::cov::map_ref;
use entropic_flow::cylinder::{Coordinates, CylinderFunction, OuterFn, TestFn};
use entropic_flow::field::{sine_bump, FieldRef, Polynomial, Trig};
use entropic_flow::maps::{CirclePerturbation, Identity, Logistic, MapRef, SinePerturbation};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

pub type SpecResult<T> = std::result::Result<T, String>;

fn split(spec: &str) -> (&str, &str) {
    spec.split_once(':').unwrap_or((spec, ""))
}

fn keyvals(body: &str) -> SpecResult<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for kv in body.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("expected key=value, got `{kv}`"))?;
        out.insert(k.trim().to_string(), num(v)?);
    }
    Ok(out)
}

fn num(s: &str) -> SpecResult<f64> {
    s.trim().parse().map_err(|_| format!("not a number: `{s}`"))
}

fn get(kv: &BTreeMap<String, f64>, key: &str, default: Option<f64>) -> SpecResult<f64> {
    kv.get(key).copied().or(default).ok_or_else(|| format!("missing `{key}=`"))
}

fn only(kv: &BTreeMap<String, f64>, keys: &[&str]) -> SpecResult<()> {
    match kv.keys().find(|k| !keys.contains(&k.as_str())) {
        Some(k) => Err(format!("unknown key `{k}` (expected {keys:?})")),
        None => Ok(()),
    }
}

fn index(x: f64, what: &str) -> SpecResult<u32> {
    if x >= 1.0 && x.fract() == 0.0 && x < u32::MAX as f64 {
        Ok(x as u32)
    } else {
        Err(format!("{what} must be a positive integer, got {x}"))
    }
}

/// `identity`, `sine:a=A,j=J`, `logistic:c=C`, `circle-sine:a=A,j=J`.
pub fn parse_map(spec: &str) -> SpecResult<MapRef<f64>> {
    let (head, body) = split(spec);
    let kv = keyvals(body)?;
    let err = |e: entropic_flow::Error| e.to_string();
    match head {
        "identity" | "id" => {
            only(&kv, &[])?;
            Ok(map_ref(Identity))
        }
        "sine" => {
            only(&kv, &["a", "j"])?;
            Ok(map_ref(SinePerturbation::new(get(&kv, "a", None)?, index(get(&kv, "j", Some(1.0))?, "j")?).map_err(err)?))
        }
        "circle-sine" => {
            only(&kv, &["a", "j"])?;
            Ok(map_ref(CirclePerturbation::new(get(&kv, "a", None)?, index(get(&kv, "j", Some(1.0))?, "j")?).map_err(err)?))
        }
        "logistic" => {
            only(&kv, &["c"])?;
            Ok(map_ref(Logistic::new(get(&kv, "c", None)?).map_err(err)?))
        }
        _ => Err(format!("unknown map `{head}` (identity | sine:a=,j= | circle-sine:a=,j= | logistic:c=)")),
    }
}

fn test_fn(spec: &str) -> SpecResult<TestFn> {
    let (head, body) = split(spec);
    match head {
        "cos" => Ok(TestFn::CosPi(num(body)?)),
        "sin" => Ok(TestFn::SinPi(num(body)?)),
        "mono" => Ok(TestFn::Monomial(body.trim().parse().map_err(|_| format!("bad exponent `{body}`"))?)),
        _ => Err(format!("unknown test function `{spec}` (cos:K | sin:K | mono:N)")),
    }
}

/// `one`, `g_half`, `syl:x1[,x2,…]` (product of evaluations),
/// `zyl:cos:K` (∫α(g)), `cyl:cos:K` (∫f·g).
pub fn parse_cylinder(spec: &str) -> SpecResult<CylinderFunction> {
    let (head, body) = split(spec);
    let err = |e: entropic_flow::Error| e.to_string();
    match head {
        "one" => Ok(CylinderFunction::constant_one()),
        "g_half" => Ok(CylinderFunction::point(0.5)),
        "syl" => {
            let xs = body.split(',').map(num).collect::<SpecResult<Vec<f64>>>()?;
            CylinderFunction::new(Coordinates::Points(xs), OuterFn::Product).map_err(err)
        }
        "zyl" => CylinderFunction::new(Coordinates::Composed(vec![test_fn(body)?]), OuterFn::identity()).map_err(err),
        "cyl" => CylinderFunction::new(Coordinates::Weighted(vec![test_fn(body)?]), OuterFn::identity()).map_err(err),
        _ => Err(format!("unknown cylinder function `{spec}` (one | g_half | syl:x,… | zyl:cos:K | cyl:cos:K)")),
    }
}

/// Coefficients of a product of `x`, `x^k`, `(1-x)`, `(1-x)^k` factors with
/// an optional leading constant, e.g. `x(1-x)^2` or `2x^2(1-x)`.
fn poly_expr(expr: &str) -> SpecResult<Vec<f64>> {
    let s: String = expr.chars().filter(|c| !c.is_whitespace() && *c != '*').collect();
    let b = s.as_bytes();
    let mut i = 0;
    let lead_end = s.find(|c: char| c == 'x' || c == '(').unwrap_or(s.len());
    let scale = if lead_end == 0 { 1.0 } else { num(&s[..lead_end])? };
    i += lead_end;
    let mut coeffs = vec![scale];
    let exponent = |i: &mut usize| -> SpecResult<u32> {
        if *i < b.len() && b[*i] == b'^' {
            let start = *i + 1;
            let mut end = start;
            while end < b.len() && b[end].is_ascii_digit() {
                end += 1;
            }
            *i = end;
            s[start..end].parse().map_err(|_| format!("bad exponent in `{expr}`"))
        } else {
            Ok(1)
        }
    };
    while i < b.len() {
        let factor: Vec<f64> = if b[i] == b'x' {
            i += 1;
            vec![0.0, 1.0]
        } else if s[i..].starts_with("(1-x)") {
            i += 5;
            vec![1.0, -1.0]
        } else {
            return Err(format!("cannot parse `{expr}` at `{}`", &s[i..]));
        };
        for _ in 0..exponent(&mut i)? {
            let mut next = vec![0.0; coeffs.len() + 1];
            for (a, &ca) in coeffs.iter().enumerate() {
                for (f, &cf) in factor.iter().enumerate() {
                    next[a + f] += ca * cf;
                }
            }
            coeffs = next;
        }
    }
    Ok(coeffs)
}

/// `poly:EXPR` or `poly:c0,c1,…`, `sin:k=K,a=A` (`A·sin(Kπx)`), `bump:j=J`.
pub fn parse_field(spec: &str) -> SpecResult<FieldRef> {
    let (head, body) = split(spec);
    match head {
        "poly" => {
            let coeffs = if body.contains('x') { poly_expr(body)? } else { body.split(',').map(num).collect::<SpecResult<Vec<f64>>>()? };
            Ok(Arc::new(Polynomial::new(coeffs)))
        }
        "sin" => {
            let kv = keyvals(body)?;
            only(&kv, &["k", "a"])?;
            let k = index(get(&kv, "k", Some(1.0))?, "k")?;
            Ok(Arc::new(Trig::sin(get(&kv, "a", Some(0.1))?, k as f64 * PI)))
        }
        "bump" => {
            let kv = keyvals(body)?;
            only(&kv, &["j"])?;
            Ok(Arc::new(sine_bump(index(get(&kv, "j", Some(1.0))?, "j")?)))
        }
        _ => Err(format!("unknown field `{spec}` (poly:EXPR | sin:k=,a= | bump:j=)")),
    }
}
