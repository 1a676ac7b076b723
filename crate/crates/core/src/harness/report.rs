use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use super::config::MethodKind;
use super::run::ResultRow;
use crate::error::{Error, Result};
use crate::estimators::Metrics;

pub const RESULTS_HEADER: &str =
    "pair,method,queries,binary_error,absolute_error,mse,true_delta,delta_hat,wall_clock,error";
pub const SUMMARY_HEADER: &str = "table,method,queries,bin,pairs,errors,binary_error,absolute_error,mse";

/// Upper edges of the |Δ| bins; the last bin is open.
pub const DELTA_BINS: [f64; 2] = [0.01, 0.02];

/// Six significant digits, fixed or exponent notation as `%g` would pick.
pub fn fmt_g(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        trim_zeros(format!("{:.*}", (5 - exp) as usize, x))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa.to_string()), exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn clean_message(msg: &str) -> String {
    msg.replace([',', '\n', '\r'], ";")
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        let (be, ae, mse) = match r.metrics {
            Some(m) => (m.binary_error.to_string(), fmt_g(m.absolute_error), fmt_g(m.mse)),
            None => (String::new(), String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            "{},{},{},{be},{ae},{mse},{},{},{},{}",
            r.pair,
            r.method,
            r.queries,
            fmt_g(r.true_delta),
            r.delta_hat.map(fmt_g).unwrap_or_default(),
            fmt_g(r.wall_clock),
            r.error.as_deref().map(clean_message).unwrap_or_default(),
        );
    }
    out
}

fn field<T: FromStr>(value: &str, line: usize, name: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::parse(line, format!("bad {name} '{value}'")))
}

/// Reads back a `results.csv`, header included.
pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == RESULTS_HEADER => {}
        Some((i, _)) => return Err(Error::parse(i + 1, "unexpected header")),
        None => return Err(Error::invalid("results file is empty")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(Error::parse(n, format!("expected 10 fields, found {}", f.len())));
        }
        let error = (!f[9].is_empty()).then(|| f[9].to_string());
        let metrics = if f[3].is_empty() {
            None
        } else {
            Some(Metrics {
                binary_error: field(f[3], n, "binary_error")?,
                absolute_error: field(f[4], n, "absolute_error")?,
                mse: field(f[5], n, "mse")?,
            })
        };
        rows.push(ResultRow {
            pair: field(f[0], n, "pair")?,
            method: field(f[1], n, "method")?,
            queries: field(f[2], n, "queries")?,
            metrics,
            true_delta: field(f[6], n, "true_delta")?,
            delta_hat: if f[7].is_empty() {
                None
            } else {
                Some(field(f[7], n, "delta_hat")?)
            },
            wall_clock: field(f[8], n, "wall_clock")?,
            error,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummaryTable {
    /// Means per method and checkpoint.
    Checkpoint,
    /// Means per method, checkpoint and |Δ| bin.
    DeltaBin,
}

impl SummaryTable {
    pub fn name(self) -> &'static str {
        match self {
            SummaryTable::Checkpoint => "checkpoint",
            SummaryTable::DeltaBin => "delta_bin",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub table: SummaryTable,
    pub method: MethodKind,
    pub queries: u64,
    /// Index into the |Δ| bins, for the binned table.
    pub bin: Option<usize>,
    /// Rows averaged.
    pub pairs: usize,
    /// Error rows of this method, excluded from the means.
    pub errors: usize,
    pub binary_error: f64,
    pub absolute_error: f64,
    pub mse: f64,
}

pub fn delta_bin_index(delta: f64) -> usize {
    DELTA_BINS
        .iter()
        .position(|&edge| delta.abs() < edge)
        .unwrap_or(DELTA_BINS.len())
}

pub fn bin_label(bin: usize) -> String {
    match bin {
        0 => format!("<{}", DELTA_BINS[0]),
        b if b >= DELTA_BINS.len() => format!(">={}", DELTA_BINS[DELTA_BINS.len() - 1]),
        b => format!("{}-{}", DELTA_BINS[b - 1], DELTA_BINS[b]),
    }
}

#[derive(Default)]
struct Acc {
    n: usize,
    be: f64,
    ae: f64,
    mse: f64,
}

impl Acc {
    fn add(&mut self, m: &Metrics) {
        self.n += 1;
        self.be += f64::from(m.binary_error);
        self.ae += m.absolute_error;
        self.mse += m.mse;
    }

    fn row(
        &self,
        table: SummaryTable,
        method: MethodKind,
        queries: u64,
        bin: Option<usize>,
        errors: usize,
    ) -> SummaryRow {
        let n = self.n as f64;
        SummaryRow {
            table,
            method,
            queries,
            bin,
            pairs: self.n,
            errors,
            binary_error: self.be / n,
            absolute_error: self.ae / n,
            mse: self.mse / n,
        }
    }
}

/// Averages result rows over pairs. Methods keep their order of first
/// appearance; checkpoints and bins are ascending.
pub fn summarize(rows: &[ResultRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(Error::invalid("no result rows to summarize"));
    }
    let mut methods: Vec<MethodKind> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let mut out = Vec::new();
    let mut binned = Vec::new();
    for &method in &methods {
        let errors = rows.iter().filter(|r| r.method == method && r.is_error()).count();
        let mut by_queries: BTreeMap<u64, Acc> = BTreeMap::new();
        let mut by_bin: BTreeMap<(u64, usize), Acc> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.method == method) {
            if let (None, Some(m)) = (&r.error, &r.metrics) {
                by_queries.entry(r.queries).or_default().add(m);
                by_bin
                    .entry((r.queries, delta_bin_index(r.true_delta)))
                    .or_default()
                    .add(m);
            }
        }
        if by_queries.is_empty() {
            out.push(Acc::default().row(SummaryTable::Checkpoint, method, 0, None, errors));
        }
        for (q, acc) in &by_queries {
            out.push(acc.row(SummaryTable::Checkpoint, method, *q, None, errors));
        }
        for ((q, b), acc) in &by_bin {
            binned.push(acc.row(SummaryTable::DeltaBin, method, *q, Some(*b), errors));
        }
    }
    out.extend(binned);
    Ok(out)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.table.name(),
            r.method,
            r.queries,
            r.bin.map(bin_label).unwrap_or_default(),
            r.pairs,
            r.errors,
            fmt_g(r.binary_error),
            fmt_g(r.absolute_error),
            fmt_g(r.mse),
        );
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

type Metric = fn(&SummaryRow) -> f64;

/// Three line plots (binary error, absolute error, mse) against log10 of
/// the query count, one series per method, from the checkpoint table.
pub fn curves_svg(summary: &[SummaryRow]) -> String {
    const W: f64 = 360.0;
    const H: f64 = 260.0;
    const PAD: f64 = 45.0;
    let rows: Vec<&SummaryRow> = summary
        .iter()
        .filter(|r| r.table == SummaryTable::Checkpoint && r.pairs > 0 && r.queries > 0)
        .collect();
    let mut methods: Vec<MethodKind> = Vec::new();
    for r in &rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.queries as f64).log10()).collect();
    let (xmin, xmax) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let (xmin, xmax) = if xmin.is_finite() && xmax > xmin {
        (xmin, xmax)
    } else {
        (xmin.min(0.0), xmin.max(0.0) + 1.0)
    };
    let legend_h = 18.0 * methods.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
        3.0 * W,
        H + legend_h + 10.0
    );
    let panels: [(&str, Metric); 3] = [
        ("binary error", |r| r.binary_error),
        ("absolute error", |r| r.absolute_error),
        ("mse", |r| r.mse),
    ];
    for (p, (title, value)) in panels.iter().enumerate() {
        let ox = p as f64 * W;
        let ymax = rows
            .iter()
            .map(|r| value(r))
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max);
        let ymax = if ymax > 0.0 { ymax * 1.05 } else { 1.0 };
        let px = |x: f64| ox + PAD + (x - xmin) / (xmax - xmin) * (W - 1.5 * PAD);
        let py = |y: f64| H - PAD + 10.0 - y / ymax * (H - 1.5 * PAD);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="15" text-anchor="middle">{title}</text>"#,
            ox + W / 2.0
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
            ox + PAD,
            py(ymax),
            W - 1.5 * PAD,
            py(0.0) - py(ymax)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            ox + PAD - 3.0,
            py(ymax) + 4.0,
            fmt_g(ymax)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">0</text>"#,
            ox + PAD - 3.0,
            py(0.0)
        );
        let mut tick = xmin.ceil();
        while tick <= xmax {
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">1e{}</text>"#,
                px(tick),
                py(0.0) + 14.0,
                tick as i64
            );
            tick += 1.0;
        }
        for (m, method) in methods.iter().enumerate() {
            let points: Vec<String> = rows
                .iter()
                .filter(|r| r.method == *method && value(r).is_finite())
                .map(|r| format!("{:.1},{:.1}", px((r.queries as f64).log10()), py(value(r))))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                PALETTE[m % PALETTE.len()],
                points.join(" ")
            );
        }
    }
    for (m, method) in methods.iter().enumerate() {
        let y = H + 14.0 + 18.0 * m as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{PAD}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{}" stroke-width="3"/><text x="{:.1}" y="{:.1}">{method}</text>"#,
            PAD + 20.0,
            PALETTE[m % PALETTE.len()],
            PAD + 26.0,
            y + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}
