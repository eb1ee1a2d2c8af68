//! One-way ANOVA of per-language scores under fixed language groupings,
//! with eta-squared and exact F-distribution p-values.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::corpus::{CorpusError, Lang};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnovaError {
    #[error("no score for {0}")]
    MissingScore(Lang),
    #[error("all scores are equal; F is undefined")]
    DegenerateData,
    #[error("need at least two groups and more observations than groups (got {groups} groups, {observations} observations)")]
    TooFewObservations { groups: usize, observations: usize },
    #[error("non-finite score {0}")]
    NonFinite(f64),
    #[error("invalid grouping: {0}")]
    InvalidScheme(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Genetic,
    Typology,
    Geography,
    Resource,
}

impl SchemeName {
    pub const ALL: [SchemeName; 4] = [SchemeName::Genetic, SchemeName::Typology, SchemeName::Geography, SchemeName::Resource];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeName::Genetic => "genetic",
            SchemeName::Typology => "typology",
            SchemeName::Geography => "geography",
            SchemeName::Resource => "resource",
        }
    }
}

impl fmt::Display for SchemeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeName {
    type Err = AnovaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemeName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| AnovaError::InvalidScheme(format!("unknown scheme {s:?}")))
    }
}

/// A partition of (a subset of) the task languages into labelled groups.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupingScheme {
    pub name: SchemeName,
    pub groups: Vec<(String, Vec<Lang>)>,
    pub omitted: Vec<Lang>,
}

impl GroupingScheme {
    /// Disjoint groups of at least two languages that, with `omitted`,
    /// cover all fifteen languages exactly once.
    pub fn validate(&self) -> Result<(), AnovaError> {
        let mut seen = BTreeSet::new();
        for (label, langs) in &self.groups {
            if langs.len() < 2 {
                return Err(AnovaError::InvalidScheme(format!("{}: group {label} has fewer than two members", self.name)));
            }
            for &l in langs {
                if !seen.insert(l) {
                    return Err(AnovaError::InvalidScheme(format!("{}: {l} appears twice", self.name)));
                }
            }
        }
        for &l in &self.omitted {
            if !seen.insert(l) {
                return Err(AnovaError::InvalidScheme(format!("{}: {l} both grouped and omitted", self.name)));
            }
        }
        if seen.len() != Lang::ALL.len() {
            return Err(AnovaError::InvalidScheme(format!("{}: covers {} of 15 languages", self.name, seen.len())));
        }
        Ok(())
    }

    /// (between, within) degrees of freedom.
    pub fn degrees_of_freedom(&self) -> (usize, usize) {
        let n: usize = self.groups.iter().map(|(_, g)| g.len()).sum();
        let k = self.groups.len();
        (k.saturating_sub(1), n.saturating_sub(k))
    }
}

fn group(label: &str, langs: &[Lang]) -> (String, Vec<Lang>) {
    (label.to_string(), langs.to_vec())
}

/// The four built-in groupings, in report order.
pub fn builtin_groupings() -> Vec<GroupingScheme> {
    use Lang::*;
    vec![
        GroupingScheme {
            name: SchemeName::Genetic,
            groups: vec![
                group("IndoEuropean", &[En, Es, De, Hi, Uk, Ru, It, Fr]),
                group("Semitic", &[Ar, Am, He]),
                group("Other", &[Zh, Tt, Hin, Ja]),
            ],
            omitted: vec![],
        },
        // Six clusters; the only split consistent with df (5, 9) over 15 languages.
        GroupingScheme {
            name: SchemeName::Typology,
            groups: vec![
                group("FusionalSVO", &[Es, It, Fr]),
                group("Templatic", &[Ar, Am, He]),
                group("CaseRich", &[Uk, Ru, De]),
                group("Agglutinative", &[Tt, Ja]),
                group("IsolatingLeaning", &[En, Zh]),
                group("Other", &[Hi, Hin]),
            ],
            omitted: vec![],
        },
        GroupingScheme {
            name: SchemeName::Geography,
            groups: vec![
                group("WesternEurope", &[En, Es, De, It, Fr]),
                group("EasternEurope", &[Uk, Ru, Tt]),
                group("MiddleEast", &[Ar, He]),
                group("SouthAsia", &[Hi, Hin]),
                group("EastAsia", &[Zh, Ja]),
            ],
            omitted: vec![Am],
        },
        GroupingScheme {
            name: SchemeName::Resource,
            groups: vec![
                group("High", &[En, Zh, Es, De, Fr, Ru, It, Ja]),
                group("Medium", &[Ar, Hi, He, Uk]),
                group("Low", &[Am, Tt, Hin]),
            ],
            omitted: vec![],
        },
    ]
}

fn serialize_stat<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("nan")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnovaResult {
    pub ss_between: f64,
    pub ss_within: f64,
    pub df_between: usize,
    pub df_within: usize,
    /// Positive infinity when the within-group spread is zero.
    #[serde(serialize_with = "serialize_stat")]
    pub f_stat: f64,
    pub eta_squared: f64,
    pub p_value: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Classical one-way ANOVA over raw groups.
pub fn anova_groups(groups: &[Vec<f64>]) -> Result<AnovaResult, AnovaError> {
    let n: usize = groups.iter().map(Vec::len).sum();
    let k = groups.len();
    if k < 2 || groups.iter().any(Vec::is_empty) || n <= k {
        return Err(AnovaError::TooFewObservations { groups: k, observations: n });
    }
    if let Some(&bad) = groups.iter().flatten().find(|v| !v.is_finite()) {
        return Err(AnovaError::NonFinite(bad));
    }
    let first = groups[0][0];
    if groups.iter().flatten().all(|&v| v == first) {
        return Err(AnovaError::DegenerateData);
    }

    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let grand = mean(&all);
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = mean(g);
        ss_between += g.len() as f64 * (m - grand) * (m - grand);
        if g.iter().any(|&v| v != g[0]) {
            ss_within += g.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
    }
    if ss_within == 0.0 && ss_between == 0.0 {
        return Err(AnovaError::DegenerateData);
    }

    let df_between = k - 1;
    let df_within = n - k;
    let (f_stat, p_value) = if ss_within == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = (ss_between / df_between as f64) / (ss_within / df_within as f64);
        (f, f_pvalue(f, df_between, df_within))
    };
    Ok(AnovaResult {
        ss_between,
        ss_within,
        df_between,
        df_within,
        f_stat,
        eta_squared: ss_between / (ss_between + ss_within),
        p_value,
    })
}

pub fn anova_oneway(scores: &BTreeMap<Lang, f64>, scheme: &GroupingScheme) -> Result<AnovaResult, AnovaError> {
    let groups = scheme
        .groups
        .iter()
        .map(|(_, langs)| langs.iter().map(|l| scores.get(l).copied().ok_or(AnovaError::MissingScore(*l))).collect())
        .collect::<Result<Vec<Vec<f64>>, _>>()?;
    anova_groups(&groups)
}

/// Natural log of the gamma function (Lanczos, g = 7, nine terms).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let series = COEF[1..].iter().enumerate().fold(COEF[0], |acc, (i, c)| acc + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

const BETA_MAX_ITER: usize = 300;
const BETA_EPS: f64 = 1e-12;

/// Regularised incomplete beta `I_x(a, b)`.
pub fn betainc(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "betainc needs positive shape parameters");
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        1.0 - betainc_cf(b, a, 1.0 - x)
    } else {
        betainc_cf(a, b, x)
    }
}

/// Continued fraction by the modified Lentz method.
fn betainc_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b));
    let front = ln_front.exp() / a;

    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let even = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + even * d;
        d = if d.abs() < TINY { 1.0 / TINY } else { 1.0 / d };
        c = 1.0 + even / c;
        if c.abs() < TINY {
            c = TINY;
        }
        h *= d * c;

        let odd = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + odd * d;
        d = if d.abs() < TINY { 1.0 / TINY } else { 1.0 / d };
        c = 1.0 + odd / c;
        if c.abs() < TINY {
            c = TINY;
        }
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < BETA_EPS {
            break;
        }
    }
    front * h
}

/// Upper-tail probability of the F distribution.
pub fn f_pvalue(f: f64, df_between: usize, df_within: usize) -> f64 {
    assert!(df_between > 0 && df_within > 0, "degrees of freedom must be positive");
    if f.is_nan() {
        return f64::NAN;
    }
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    let (d1, d2) = (df_between as f64, df_within as f64);
    betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)).clamp(0.0, 1.0)
}

/// Results per scheme; a failing scheme does not prevent the others.
#[derive(Clone, Debug)]
pub struct AnovaReport {
    pub rows: Vec<(SchemeName, Result<AnovaResult, AnovaError>)>,
}

pub fn anova_report(scores: &BTreeMap<Lang, f64>, schemes: &[GroupingScheme]) -> AnovaReport {
    AnovaReport {
        rows: schemes.iter().map(|s| (s.name, anova_oneway(scores, s))).collect(),
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum JsonRow<'a> {
    Ok(&'a AnovaResult),
    Err { error: String },
}

impl AnovaReport {
    pub fn to_json(&self) -> serde_json::Value {
        let map: BTreeMap<&str, JsonRow> = self
            .rows
            .iter()
            .map(|(name, r)| {
                let row = match r {
                    Ok(res) => JsonRow::Ok(res),
                    Err(e) => JsonRow::Err { error: e.to_string() },
                };
                (name.as_str(), row)
            })
            .collect();
        serde_json::to_value(map).expect("report serialises")
    }

    pub fn render(&self) -> String {
        let mut out = format!("{:<12}{:>8}{:>12}{:>12}{:>12}\n", "scheme", "eta^2", "F", "df", "p");
        for (name, r) in &self.rows {
            match r {
                Ok(a) => out.push_str(&format!(
                    "{:<12}{:>8.3}{:>12.3}{:>12}{:>12.5}\n",
                    name.as_str(),
                    a.eta_squared,
                    a.f_stat,
                    format!("({}, {})", a.df_between, a.df_within),
                    a.p_value
                )),
                Err(e) => out.push_str(&format!("{:<12}  error: {e}\n", name.as_str())),
            }
        }
        out
    }
}

/// Parses two-column `lang<TAB>score` text. `#` lines, blanks, and a
/// non-numeric header row are skipped.
pub fn parse_scores_tsv(text: &str, origin: &Path) -> Result<BTreeMap<Lang, f64>, CorpusError> {
    let mut scores = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let invalid = |reason: String| CorpusError::Invalid {
            path: origin.to_path_buf(),
            line: idx + 1,
            reason,
        };
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        let [lang, score] = cols[..] else {
            return Err(invalid(format!("expected 2 columns, found {}", cols.len())));
        };
        let Ok(value) = score.parse::<f64>() else {
            if scores.is_empty() && lang.parse::<Lang>().is_err() {
                continue;
            }
            return Err(invalid(format!("bad score {score:?}")));
        };
        let lang: Lang = lang.parse().map_err(|e: CorpusError| invalid(e.to_string()))?;
        if scores.insert(lang, value).is_some() {
            return Err(invalid(format!("duplicate score for {lang}")));
        }
    }
    Ok(scores)
}
