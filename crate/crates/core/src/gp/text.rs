//! Plain-text problem format.
//!
//! ```text
//! # comment (also allowed after any line's content)
//! VARS x y            # declarations, may repeat; names precede their use
//! OBJ                 # one posynomial
//! 1 x:1
//! + 1 y               # `+` continues the current posynomial; bare name = ^1
//! INEQ                # each unprefixed line starts a new `<= 1` constraint
//! 1 x:-1 y:-1
//! EQ                  # one monomial `= 1` per line
//! 0.25 x
//! BOUNDS              # name lower upper, `-` for an open side
//! y 1e-3 -
//! ```
//!
//! A monomial line is a positive coefficient followed by `name:exponent`
//! factors. Section keywords are case-sensitive.

use std::fmt::Write as _;

use super::{GpError, GpProblem, Monomial, Posynomial, VarId};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Section {
    None,
    Obj,
    Ineq,
    Eq,
    Bounds,
}

fn err(line: usize, msg: impl Into<String>) -> GpError {
    GpError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_number(tok: &str, line: usize, what: &str) -> Result<f64, GpError> {
    let v: f64 = tok
        .parse()
        .map_err(|_| err(line, format!("invalid {what} `{tok}`")))?;
    if !v.is_finite() {
        return Err(err(line, format!("{what} `{tok}` is not finite")));
    }
    Ok(v)
}

fn valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '[' | ']'))
}

fn parse_monomial(tokens: &[&str], problem: &GpProblem, line: usize) -> Result<Monomial, GpError> {
    let (first, rest) = tokens
        .split_first()
        .ok_or_else(|| err(line, "empty monomial"))?;
    let coeff = parse_number(first, line, "coefficient")?;
    if coeff <= 0.0 {
        return Err(err(line, format!("coefficient {coeff} must be positive")));
    }
    let mut exps: Vec<(VarId, f64)> = Vec::with_capacity(rest.len());
    for tok in rest {
        let (name, exp) = match tok.split_once(':') {
            Some((n, e)) => (n, parse_number(e, line, "exponent")?),
            None => (*tok, 1.0),
        };
        let id = problem
            .var_id(name)
            .ok_or_else(|| err(line, format!("undeclared variable `{name}`")))?;
        exps.push((id, exp));
    }
    Ok(Monomial::new(coeff, exps))
}

/// Parses the text format into a validated problem.
pub fn parse_gp(text: &str) -> Result<GpProblem, GpError> {
    let mut problem = GpProblem::new();
    let mut section = Section::None;
    let mut objective: Vec<Monomial> = Vec::new();
    let mut ineqs: Vec<Vec<Monomial>> = Vec::new();
    let mut eqs: Vec<Monomial> = Vec::new();
    let mut bounds: Vec<(VarId, Option<f64>, Option<f64>)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = content.split_whitespace().collect();
        match tokens[0] {
            "VARS" => {
                for name in &tokens[1..] {
                    if !valid_name(name) {
                        return Err(err(line, format!("invalid variable name `{name}`")));
                    }
                    if problem.var_id(name).is_some() {
                        return Err(err(line, format!("variable `{name}` declared twice")));
                    }
                    problem.add_var(*name);
                }
                continue;
            }
            "OBJ" | "INEQ" | "EQ" | "BOUNDS" => {
                if tokens.len() > 1 {
                    return Err(err(line, format!("unexpected tokens after `{}`", tokens[0])));
                }
                section = match tokens[0] {
                    "OBJ" => Section::Obj,
                    "INEQ" => Section::Ineq,
                    "EQ" => Section::Eq,
                    _ => Section::Bounds,
                };
                continue;
            }
            _ => {}
        }
        let cont = tokens[0] == "+";
        let body = if cont { &tokens[1..] } else { &tokens[..] };
        match section {
            Section::None => return Err(err(line, "content before any section header")),
            Section::Obj => objective.push(parse_monomial(body, &problem, line)?),
            Section::Ineq => {
                let m = parse_monomial(body, &problem, line)?;
                if cont {
                    ineqs
                        .last_mut()
                        .ok_or_else(|| err(line, "continuation without a constraint to extend"))?
                        .push(m);
                } else {
                    ineqs.push(vec![m]);
                }
            }
            Section::Eq => {
                if cont {
                    return Err(err(line, "equalities must be single monomials"));
                }
                eqs.push(parse_monomial(body, &problem, line)?);
            }
            Section::Bounds => {
                if cont || body.len() != 3 {
                    return Err(err(line, "bounds take the form `name lower upper`"));
                }
                let id = problem
                    .var_id(body[0])
                    .ok_or_else(|| err(line, format!("undeclared variable `{}`", body[0])))?;
                let side = |tok: &str| -> Result<Option<f64>, GpError> {
                    if tok == "-" {
                        return Ok(None);
                    }
                    let v = parse_number(tok, line, "bound")?;
                    if v <= 0.0 {
                        return Err(err(line, format!("bound {v} must be positive")));
                    }
                    Ok(Some(v))
                };
                bounds.push((id, side(body[1])?, side(body[2])?));
            }
        }
    }

    problem.set_objective(Posynomial::new(objective));
    for terms in ineqs {
        problem.add_inequality(Posynomial::new(terms));
    }
    for m in eqs {
        problem.add_equality(m);
    }
    for (id, lo, hi) in bounds {
        problem.set_bounds(id, lo, hi);
    }
    problem.validate()?;
    Ok(problem)
}

fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e6).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn write_monomial(out: &mut String, prefix: &str, m: &Monomial, problem: &GpProblem) {
    out.push_str(prefix);
    out.push_str(&fmt_num(m.coeff()));
    for &(v, e) in m.exps() {
        let _ = write!(out, " {}:{}", problem.var_name(v), fmt_num(e));
    }
    out.push('\n');
}

/// Serializes a problem; `parse_gp(write_gp(p)) == p` for problems whose
/// variable names are valid identifiers.
pub fn write_gp(problem: &GpProblem) -> String {
    let mut out = String::new();
    if problem.num_vars() > 0 {
        out.push_str("VARS");
        for name in problem.var_names() {
            out.push(' ');
            out.push_str(name);
        }
        out.push('\n');
    }
    out.push_str("OBJ\n");
    for (i, t) in problem.objective().terms().iter().enumerate() {
        write_monomial(&mut out, if i == 0 { "" } else { "+ " }, t, problem);
    }
    if !problem.inequalities().is_empty() {
        out.push_str("INEQ\n");
        for p in problem.inequalities() {
            for (i, t) in p.terms().iter().enumerate() {
                write_monomial(&mut out, if i == 0 { "" } else { "+ " }, t, problem);
            }
        }
    }
    if !problem.equalities().is_empty() {
        out.push_str("EQ\n");
        for m in problem.equalities() {
            write_monomial(&mut out, "", m, problem);
        }
    }
    let bounded: Vec<usize> = (0..problem.num_vars())
        .filter(|&v| problem.bounds(v) != (None, None))
        .collect();
    if !bounded.is_empty() {
        out.push_str("BOUNDS\n");
        for v in bounded {
            let (lo, hi) = problem.bounds(v);
            let side = |b: Option<f64>| b.map_or("-".to_string(), fmt_num);
            let _ = writeln!(out, "{} {} {}", problem.var_name(v), side(lo), side(hi));
        }
    }
    out
}
