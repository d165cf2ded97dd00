//! Problem, candidate and trajectory file formats.
//!
//! Problem and candidate files are line-oriented `key = value` text grouped
//! in `[section]`s, with `#` comments. Expression values may be quoted.

use std::fmt::Write as _;

use crate::exprdsl::{parse, Expr};
use crate::model::{parse_rational, Bound, ControlSignal, Piecewise, ProblemDef, Rational, Trajectory};
use crate::sufficiency::{value_layout, CandidateSolution, Convention, VerifyOptions};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for FormatError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.line == 0 {
            f.write_str(&self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

impl std::error::Error for FormatError {}

fn fail<T>(line: usize, message: impl Into<String>) -> Result<T, FormatError> {
    Err(FormatError { line, message: message.into() })
}

#[derive(Debug, Clone)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

#[derive(Debug, Clone)]
struct Section {
    name: String,
    line: usize,
    entries: Vec<Entry>,
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

fn unquote(value: &str, line: usize) -> Result<String, FormatError> {
    let v = value.trim();
    match v.strip_prefix('"') {
        Some(rest) => match rest.strip_suffix('"') {
            Some(inner) if !inner.contains('"') => Ok(inner.to_string()),
            _ => fail(line, "unterminated or malformed quoted value"),
        },
        None => Ok(v.to_string()),
    }
}

fn sections(text: &str) -> Result<Vec<Section>, FormatError> {
    let mut out: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = strip_comment(raw).trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                return fail(line, "malformed section header");
            };
            let name = name.trim().to_string();
            if out.iter().any(|s| s.name == name) {
                return fail(line, format!("duplicate section [{name}]"));
            }
            out.push(Section { name, line, entries: Vec::new() });
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return fail(line, "expected `key = value`");
        };
        let Some(section) = out.last_mut() else {
            return fail(line, "entry outside of any section");
        };
        section.entries.push(Entry { key: key.trim().to_string(), value: unquote(value, line)?, line });
    }
    Ok(out)
}

/// Keyed view of one section that rejects duplicates and tracks unused keys.
struct Keys<'a> {
    section: &'a Section,
    used: Vec<bool>,
}

impl<'a> Keys<'a> {
    fn new(section: &'a Section) -> Result<Self, FormatError> {
        for (i, e) in section.entries.iter().enumerate() {
            if section.entries[..i].iter().any(|p| p.key == e.key) {
                return fail(e.line, format!("duplicate key `{}` in [{}]", e.key, section.name));
            }
        }
        Ok(Keys { section, used: vec![false; section.entries.len()] })
    }

    fn get(&mut self, key: &str) -> Option<&'a Entry> {
        let i = self.section.entries.iter().position(|e| e.key == key)?;
        self.used[i] = true;
        Some(&self.section.entries[i])
    }

    fn require(&mut self, key: &str) -> Result<&'a Entry, FormatError> {
        match self.get(key) {
            Some(e) => Ok(e),
            None => fail(self.section.line, format!("missing key `{key}` in [{}]", self.section.name)),
        }
    }

    fn finish(self) -> Result<(), FormatError> {
        match self.used.iter().position(|u| !u) {
            Some(i) => {
                let e = &self.section.entries[i];
                fail(e.line, format!("unknown key `{}` in [{}]", e.key, self.section.name))
            }
            None => Ok(()),
        }
    }
}

fn expr(e: &Entry) -> Result<Expr, FormatError> {
    parse(&e.value).or_else(|err| fail(e.line, format!("`{}`: {err}", e.key)))
}

fn rat(e: &Entry) -> Result<Rational, FormatError> {
    parse_rational(&e.value).or_else(|err| fail(e.line, format!("`{}`: {err}", e.key)))
}

fn count(e: &Entry) -> Result<usize, FormatError> {
    match e.value.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => fail(e.line, format!("`{}` must be a positive integer", e.key)),
    }
}

fn number(text: &str, line: usize) -> Result<f64, FormatError> {
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => fail(line, format!("`{text}` is not a finite number")),
    }
}

fn pair(e: &Entry) -> Result<(f64, f64), FormatError> {
    let parts: Vec<&str> = e.value.split_whitespace().collect();
    match parts.as_slice() {
        [lo, hi] => Ok((number(lo, e.line)?, number(hi, e.line)?)),
        _ => fail(e.line, format!("`{}` expects `lo hi`", e.key)),
    }
}

fn bound(e: &Entry) -> Result<Bound, FormatError> {
    if e.value == "free" {
        return Ok(Bound::Free);
    }
    let (lo, hi) = pair(e)?;
    Ok(Bound::Interval { lo, hi })
}

fn find<'a>(secs: &'a [Section], name: &str) -> Option<&'a Section> {
    secs.iter().find(|s| s.name == name)
}

fn reject_unknown_sections(secs: &[Section], known: &[&str]) -> Result<(), FormatError> {
    match secs.iter().find(|s| !known.contains(&s.name.as_str())) {
        Some(s) => fail(s.line, format!("unknown section [{}]", s.name)),
        None => Ok(()),
    }
}

fn bounds(secs: &[Section], name: &str, prefix: &str, count: usize) -> Result<Vec<Bound>, FormatError> {
    let Some(sec) = find(secs, name) else {
        return Ok(vec![Bound::Free; count]);
    };
    let mut keys = Keys::new(sec)?;
    let out = (1..=count)
        .map(|i| keys.get(&format!("{prefix}{i}")).map_or(Ok(Bound::Free), bound))
        .collect::<Result<Vec<_>, _>>()?;
    keys.finish()?;
    Ok(out)
}

/// Parse a problem file. Missing `[omega]`/`[terminal]` entries mean `free`.
pub fn parse_problem(text: &str) -> Result<ProblemDef, FormatError> {
    let secs = sections(text)?;
    reject_unknown_sections(&secs, &["problem", "omega", "terminal"])?;
    let Some(sec) = find(&secs, "problem") else {
        return fail(0, "missing section [problem]");
    };
    let mut keys = Keys::new(sec)?;
    let name = keys.get("name").map(|e| e.value.clone()).unwrap_or_else(|| "problem".into());
    let n = count(keys.require("n")?)?;
    let m = count(keys.require("m")?)?;
    let a = rat(keys.require("a")?)?;
    let b = rat(keys.require("b")?)?;
    let r = rat(keys.require("r")?)?;
    let s = rat(keys.require("s")?)?;
    let degenerate = match keys.get("degenerate") {
        None => false,
        Some(e) => match e.value.as_str() {
            "true" => true,
            "false" => false,
            _ => return fail(e.line, "`degenerate` must be true or false"),
        },
    };
    let f0 = expr(keys.require("f0")?)?;
    let f = (1..=n).map(|i| expr(keys.require(&format!("f{i}"))?)).collect::<Result<Vec<_>, _>>()?;
    let g0 = expr(keys.require("g0")?)?;
    let phi = (1..=n).map(|i| expr(keys.require(&format!("phi{i}"))?)).collect::<Result<Vec<_>, _>>()?;
    let psi = (1..=m).map(|j| expr(keys.require(&format!("psi{j}"))?)).collect::<Result<Vec<_>, _>>()?;
    keys.finish()?;
    let omega = bounds(&secs, "omega", "u", m)?;
    let terminal = bounds(&secs, "terminal", "x", n)?;
    Ok(ProblemDef { name, n, m, a, b, r, s, f0, f, g0, phi, psi, omega, terminal, degenerate })
}

fn write_bound(out: &mut String, key: &str, b: &Bound) {
    match *b {
        Bound::Free => writeln!(out, "{key} = free"),
        Bound::Interval { lo, hi } => writeln!(out, "{key} = {lo:?} {hi:?}"),
    }
    .expect("write to string");
}

pub fn write_problem(p: &ProblemDef) -> String {
    let mut o = String::new();
    let w = &mut o;
    let _ = writeln!(w, "[problem]");
    let _ = writeln!(w, "name = {}", p.name);
    let _ = writeln!(w, "n = {}\nm = {}", p.n, p.m);
    let _ = writeln!(w, "a = {}\nb = {}\nr = {}\ns = {}", p.a, p.b, p.r, p.s);
    if p.degenerate {
        let _ = writeln!(w, "degenerate = true");
    }
    let _ = writeln!(w, "f0 = \"{}\"", p.f0);
    for (i, e) in p.f.iter().enumerate() {
        let _ = writeln!(w, "f{} = \"{e}\"", i + 1);
    }
    let _ = writeln!(w, "g0 = \"{}\"", p.g0);
    for (i, e) in p.phi.iter().enumerate() {
        let _ = writeln!(w, "phi{} = \"{e}\"", i + 1);
    }
    for (j, e) in p.psi.iter().enumerate() {
        let _ = writeln!(w, "psi{} = \"{e}\"", j + 1);
    }
    let _ = writeln!(w, "\n[omega]");
    for (j, b) in p.omega.iter().enumerate() {
        write_bound(w, &format!("u{}", j + 1), b);
    }
    let _ = writeln!(w, "\n[terminal]");
    for (i, b) in p.terminal.iter().enumerate() {
        write_bound(w, &format!("x{}", i + 1), b);
    }
    o
}

/// Verification settings a candidate file may carry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifySettings {
    pub convention: Option<Convention>,
    pub tol_hj: Option<f64>,
    pub tol_max: Option<f64>,
    pub tol_cost: Option<f64>,
    pub search_box: Option<(f64, f64)>,
}

impl VerifySettings {
    pub fn from_options(o: &VerifyOptions) -> Self {
        VerifySettings {
            convention: Some(o.convention),
            tol_hj: Some(o.tol_hj),
            tol_max: Some(o.tol_max),
            tol_cost: Some(o.tol_cost),
            search_box: o.search_box,
        }
    }

    pub fn apply(&self, o: &mut VerifyOptions) {
        if let Some(c) = self.convention {
            o.convention = c;
        }
        if let Some(v) = self.tol_hj {
            o.tol_hj = v;
        }
        if let Some(v) = self.tol_max {
            o.tol_max = v;
        }
        if let Some(v) = self.tol_cost {
            o.tol_cost = v;
        }
        if self.search_box.is_some() {
            o.search_box = self.search_box;
        }
    }
}

#[derive(Debug, Clone)]
pub struct CandidateFile {
    pub candidate: CandidateSolution,
    pub settings: VerifySettings,
}

fn piecewise(sec: &Section, layout: &[String], dim: usize) -> Result<Piecewise, FormatError> {
    let mut pieces = Vec::new();
    for e in &sec.entries {
        if e.key != "piece" {
            return fail(e.line, format!("unknown key `{}` in [{}]", e.key, sec.name));
        }
        let Some((span, body)) = e.value.split_once(':') else {
            return fail(e.line, "piece expects `t0 t1 : expr`");
        };
        let ends: Vec<&str> = span.split_whitespace().collect();
        let [t0, t1] = ends.as_slice() else {
            return fail(e.line, "piece expects two endpoints before `:`");
        };
        let t0 = parse_rational(t0).or_else(|err| fail(e.line, err.to_string()))?;
        let t1 = parse_rational(t1).or_else(|err| fail(e.line, err.to_string()))?;
        let exprs = body
            .split(';')
            .map(|s| parse(s).or_else(|err| fail(e.line, format!("piece expression: {err}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if exprs.len() != dim {
            return fail(e.line, format!("piece has {} components, expected {dim}", exprs.len()));
        }
        pieces.push((t0, t1, exprs));
    }
    Piecewise::new(layout, pieces).or_else(|err| fail(sec.line, format!("[{}]: {err}", sec.name)))
}

/// Parse a candidate file for a problem with `n` states and `m` controls.
pub fn parse_candidate(text: &str, n: usize, m: usize) -> Result<CandidateFile, FormatError> {
    let secs = sections(text)?;
    reject_unknown_sections(&secs, &["xstar", "ustar", "S", "dSdt", "dSdx", "feedback", "verify"])?;
    let time = ["t".to_string()];
    let vl = value_layout(n);
    let required = |name: &str| find(&secs, name).map_or_else(|| fail(0, format!("missing section [{name}]")), Ok);
    let x_star = find(&secs, "xstar").map(|s| piecewise(s, &time, n)).transpose()?;
    let u_star = piecewise(required("ustar")?, &time, m)?;
    let value = piecewise(required("S")?, &vl, 1)?;
    let value_dt = find(&secs, "dSdt").map(|s| piecewise(s, &vl, 1)).transpose()?;
    let value_dx = find(&secs, "dSdx").map(|s| piecewise(s, &vl, n)).transpose()?;
    let feedback = match find(&secs, "feedback") {
        None => None,
        Some(sec) => {
            let mut keys = Keys::new(sec)?;
            let e = keys.require("ustar")?;
            let exprs = e
                .value
                .split(';')
                .map(|s| parse(s).or_else(|err| fail(e.line, format!("feedback: {err}"))))
                .collect::<Result<Vec<_>, _>>()?;
            if exprs.len() != m {
                return fail(e.line, format!("feedback has {} components, expected {m}", exprs.len()));
            }
            keys.finish()?;
            Some(exprs)
        }
    };
    let mut settings = VerifySettings::default();
    let mut search_box = None;
    if let Some(sec) = find(&secs, "verify") {
        let mut keys = Keys::new(sec)?;
        if let Some(e) = keys.get("convention") {
            settings.convention = Some(e.value.parse().or_else(|err: String| fail(e.line, err))?);
        }
        let tol = |e: Option<&Entry>| -> Result<Option<f64>, FormatError> {
            e.map(|e| match number(&e.value, e.line)? {
                v if v > 0.0 => Ok(v),
                _ => fail(e.line, format!("`{}` must be positive", e.key)),
            })
            .transpose()
        };
        settings.tol_hj = tol(keys.get("tol_hj"))?;
        settings.tol_max = tol(keys.get("tol_max"))?;
        settings.tol_cost = tol(keys.get("tol_cost"))?;
        if let Some(e) = keys.get("box") {
            let (lo, hi) = pair(e)?;
            if lo > hi {
                return fail(e.line, "search box is empty");
            }
            search_box = Some((lo, hi));
            settings.search_box = search_box;
        }
        keys.finish()?;
    }
    let candidate = CandidateSolution { x_star, u_star, value, value_dt, value_dx, feedback, search_box };
    Ok(CandidateFile { candidate, settings })
}

fn write_pieces(out: &mut String, name: &str, p: &Piecewise) {
    let _ = writeln!(out, "[{name}]");
    for piece in p.pieces() {
        let body: Vec<String> = piece.exprs.iter().map(|e| e.to_string()).collect();
        let _ = writeln!(out, "piece = \"{} {} : {}\"", piece.start, piece.end, body.join(" ; "));
    }
    out.push('\n');
}

pub fn write_candidate(c: &CandidateSolution, settings: &VerifySettings) -> String {
    let mut o = String::new();
    if let Some(x) = &c.x_star {
        write_pieces(&mut o, "xstar", x);
    }
    write_pieces(&mut o, "ustar", &c.u_star);
    write_pieces(&mut o, "S", &c.value);
    if let Some(p) = &c.value_dt {
        write_pieces(&mut o, "dSdt", p);
    }
    if let Some(p) = &c.value_dx {
        write_pieces(&mut o, "dSdx", p);
    }
    if let Some(fb) = &c.feedback {
        let body: Vec<String> = fb.iter().map(|e| e.to_string()).collect();
        let _ = writeln!(o, "[feedback]\nustar = \"{}\"\n", body.join(" ; "));
    }
    let _ = writeln!(o, "[verify]");
    if let Some(conv) = settings.convention {
        let _ = writeln!(o, "convention = {conv}");
    }
    for (key, v) in [("tol_hj", settings.tol_hj), ("tol_max", settings.tol_max), ("tol_cost", settings.tol_cost)] {
        if let Some(v) = v {
            let _ = writeln!(o, "{key} = {v:e}");
        }
    }
    if let Some((lo, hi)) = settings.search_box.or(c.search_box) {
        let _ = writeln!(o, "box = {lo:?} {hi:?}");
    }
    o
}

/// Trajectory and control at every integration grid node, 12 significant digits.
pub fn trajectory_csv(traj: &Trajectory, u: &ControlSignal) -> Result<String, crate::model::ModelError> {
    let mut o = String::from("t");
    for i in 0..traj.n() {
        let _ = write!(o, ",x{i}");
    }
    for j in 0..u.m {
        let _ = write!(o, ",u{j}");
    }
    o.push('\n');
    for j in 0..traj.len() {
        let t = traj.node_time(j);
        let _ = write!(o, "{t:.11e}");
        for v in traj.node(j) {
            let _ = write!(o, ",{v:.11e}");
        }
        for v in u.signal_at(t.min(u.end))? {
            let _ = write!(o, ",{v:.11e}");
        }
        o.push('\n');
    }
    Ok(o)
}
