//! Ranking metrics over TREC runs and graded judgments, and the two-tailed
//! paired t-test used to compare systems.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ranking::RankedList;
use crate::trec::Judgments;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricConfig {
    /// Grades at or above this count as relevant for MAP, RR and recall.
    pub binary_threshold: u32,
    /// Only the first `eval_depth` entries of a run are considered.
    pub eval_depth: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            binary_threshold: 1,
            eval_depth: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Map,
    Rr,
    Ndcg(usize),
    Recall(usize),
}

impl Metric {
    /// MAP, RR, nDCG@{1,3,10}, Recall@1000.
    pub fn standard() -> Vec<Metric> {
        vec![
            Metric::Map,
            Metric::Rr,
            Metric::Ndcg(1),
            Metric::Ndcg(3),
            Metric::Ndcg(10),
            Metric::Recall(1000),
        ]
    }

    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        s.split(',')
            .map(str::trim)
            .filter(|m| !m.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Map => f.write_str("map"),
            Metric::Rr => f.write_str("rr"),
            Metric::Ndcg(c) => write!(f, "ndcg@{c}"),
            Metric::Recall(d) => write!(f, "recall@{d}"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let cutoff = |rest: &str| -> Result<usize> {
            rest.parse::<usize>()
                .ok()
                .filter(|&c| c >= 1)
                .ok_or_else(|| Error::InvalidConfig(format!("bad cutoff in metric {s:?}")))
        };
        match lower.as_str() {
            "map" => Ok(Metric::Map),
            "rr" | "mrr" | "recip_rank" => Ok(Metric::Rr),
            _ => {
                if let Some(rest) = lower.strip_prefix("ndcg@") {
                    Ok(Metric::Ndcg(cutoff(rest)?))
                } else if let Some(rest) = lower.strip_prefix("recall@") {
                    Ok(Metric::Recall(cutoff(rest)?))
                } else {
                    Err(Error::InvalidConfig(format!("unknown metric {s:?}")))
                }
            }
        }
    }
}

fn judged<'a>(run: &RankedList, judgments: &'a Judgments) -> Result<&'a HashMap<String, u32>> {
    judgments
        .query(&run.query_id)
        .ok_or_else(|| Error::UnknownQuery(run.query_id.clone()))
}

fn grade_of(grades: &HashMap<String, u32>, id: &str) -> u32 {
    grades.get(id).copied().unwrap_or(0)
}

fn relevant_count(grades: &HashMap<String, u32>, config: &MetricConfig) -> usize {
    grades.values().filter(|&&g| g >= config.binary_threshold).count()
}

/// 1/rank of the first relevant passage within the evaluation depth, else 0.
pub fn reciprocal_rank(run: &RankedList, judgments: &Judgments, config: &MetricConfig) -> Result<f64> {
    let grades = judged(run, judgments)?;
    Ok(run
        .entries()
        .iter()
        .take(config.eval_depth)
        .find(|e| grade_of(grades, &e.passage_id) >= config.binary_threshold)
        .map_or(0.0, |e| 1.0 / e.rank as f64))
}

/// Sum of precision at each relevant retrieved rank, over all judged relevant.
pub fn average_precision(run: &RankedList, judgments: &Judgments, config: &MetricConfig) -> Result<f64> {
    let grades = judged(run, judgments)?;
    let total = relevant_count(grades, config);
    if total == 0 {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, e) in run.entries().iter().take(config.eval_depth).enumerate() {
        if grade_of(grades, &e.passage_id) >= config.binary_threshold {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / total as f64)
}

/// Graded nDCG with `2^g - 1` gains and `log2(i + 1)` discounts.
pub fn ndcg_at(run: &RankedList, judgments: &Judgments, cutoff: usize, config: &MetricConfig) -> Result<f64> {
    if cutoff == 0 {
        return Err(Error::InvalidConfig("nDCG cutoff must be >= 1".into()));
    }
    let grades = judged(run, judgments)?;
    let depth = cutoff.min(config.eval_depth);
    let gain = |g: u32| 2f64.powi(g as i32) - 1.0;
    let discount = |i: usize| ((i + 2) as f64).log2();
    let dcg: f64 = run
        .entries()
        .iter()
        .take(depth)
        .enumerate()
        .map(|(i, e)| gain(grade_of(grades, &e.passage_id)) / discount(i))
        .sum();
    let mut ideal: Vec<u32> = grades.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .into_iter()
        .take(depth)
        .enumerate()
        .map(|(i, g)| gain(g) / discount(i))
        .sum();
    Ok(if idcg == 0.0 { 0.0 } else { dcg / idcg })
}

pub fn recall_at(run: &RankedList, judgments: &Judgments, depth: usize, config: &MetricConfig) -> Result<f64> {
    let grades = judged(run, judgments)?;
    let total = relevant_count(grades, config);
    if total == 0 {
        return Ok(0.0);
    }
    let found = run
        .entries()
        .iter()
        .take(depth.min(config.eval_depth))
        .filter(|e| grade_of(grades, &e.passage_id) >= config.binary_threshold)
        .count();
    Ok(found as f64 / total as f64)
}

pub fn compute(metric: Metric, run: &RankedList, judgments: &Judgments, config: &MetricConfig) -> Result<f64> {
    match metric {
        Metric::Map => average_precision(run, judgments, config),
        Metric::Rr => reciprocal_rank(run, judgments, config),
        Metric::Ndcg(c) => ndcg_at(run, judgments, c, config),
        Metric::Recall(d) => {
            let cfg = MetricConfig {
                eval_depth: config.eval_depth.max(d),
                ..*config
            };
            recall_at(run, judgments, d, &cfg)
        }
    }
}

/// Per-query values and means for a set of metrics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub metrics: Vec<Metric>,
    /// metric -> query id -> value, for evaluated queries only.
    pub per_query: BTreeMap<Metric, BTreeMap<String, f64>>,
    /// Queries in the run without judgments, or with no relevant passage.
    pub skipped: Vec<String>,
}

impl EvalReport {
    pub fn mean(&self, metric: Metric) -> Option<f64> {
        let values = self.per_query.get(&metric)?;
        if values.is_empty() {
            return None;
        }
        Some(values.values().sum::<f64>() / values.len() as f64)
    }

    pub fn values(&self, metric: Metric) -> Option<&BTreeMap<String, f64>> {
        self.per_query.get(&metric)
    }

    /// Paired t-test of `self` against `baseline` on the queries both
    /// reports evaluated.
    pub fn compare(&self, baseline: &EvalReport, metric: Metric) -> Result<TTest> {
        let missing = || Error::InvalidConfig(format!("metric {metric} was not evaluated"));
        let ours = self.values(metric).ok_or_else(missing)?;
        let theirs = baseline.values(metric).ok_or_else(missing)?;
        let (a, b): (Vec<f64>, Vec<f64>) = ours.iter().filter_map(|(q, v)| theirs.get(q).map(|w| (*v, *w))).unzip();
        paired_t_test(&a, &b)
    }

    /// CSV with `query_id,metric,value` rows and an `ALL` row per metric,
    /// four decimals.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "query_id,metric,value")?;
        for m in &self.metrics {
            for (qid, v) in &self.per_query[m] {
                writeln!(out, "{qid},{m},{v:.4}")?;
            }
        }
        for m in &self.metrics {
            writeln!(out, "ALL,{m},{:.4}", self.mean(*m).unwrap_or(0.0))?;
        }
        Ok(())
    }
}

/// Evaluates every run with judgments and at least one relevant passage.
pub fn evaluate(
    runs: &[RankedList],
    judgments: &Judgments,
    metrics: &[Metric],
    config: &MetricConfig,
) -> Result<EvalReport> {
    let mut report = EvalReport {
        metrics: metrics.to_vec(),
        per_query: metrics.iter().map(|m| (*m, BTreeMap::new())).collect(),
        skipped: Vec::new(),
    };
    for run in runs {
        let usable = judgments
            .query(&run.query_id)
            .is_some_and(|g| relevant_count(g, config) > 0);
        if !usable {
            log::warn!("query {}: no relevant judgments, excluded from means", run.query_id);
            report.skipped.push(run.query_id.clone());
            continue;
        }
        for m in metrics {
            let v = compute(*m, run, judgments, config)?;
            report
                .per_query
                .get_mut(m)
                .expect("initialised")
                .insert(run.query_id.clone(), v);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

/// Two-tailed paired t-test on `a[i] - b[i]`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::DegenerateInput(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::DegenerateInput(format!("need at least 2 pairs, got {n}")));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let df = n - 1;
    if diffs.iter().all(|&d| d == 0.0) {
        return Ok(TTest { t: 0.0, p: 1.0, df });
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / df as f64;
    if var == 0.0 {
        return Err(Error::DegenerateInput(
            "differences have zero variance; t is undefined".into(),
        ));
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    Ok(TTest {
        t,
        p: student_t_two_tailed(t, df as f64),
        df,
    })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_tailed(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    regularized_incomplete_beta(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Lanczos approximation (g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
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
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// `I_x(a, b)` via the Lentz continued fraction, using the symmetry
/// `I_x(a, b) = 1 - I_{1-x}(b, a)` where the fraction converges slowly.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = f64::from(m);
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qrels(q: &str, grades: &[(&str, u32)]) -> Judgments {
        let mut j = Judgments::new();
        for (p, g) in grades {
            j.insert(q, p, *g).unwrap();
        }
        j
    }

    fn run(q: &str, ids: &[&str]) -> RankedList {
        let n = ids.len();
        RankedList::from_scores(
            q,
            ids.iter()
                .enumerate()
                .map(|(i, p)| (p.to_string(), (n - i) as f64))
                .collect(),
        )
    }

    const CFG: MetricConfig = MetricConfig {
        binary_threshold: 1,
        eval_depth: 1000,
    };

    #[test]
    fn rr_examples() {
        let j = qrels("q", &[("r", 1)]);
        assert_eq!(reciprocal_rank(&run("q", &["r", "a"]), &j, &CFG).unwrap(), 1.0);
        assert_eq!(
            reciprocal_rank(&run("q", &["a", "b", "c", "r"]), &j, &CFG).unwrap(),
            0.25
        );
        assert_eq!(reciprocal_rank(&run("q", &["a", "b"]), &j, &CFG).unwrap(), 0.0);
    }

    #[test]
    fn rr_is_zero_beyond_depth() {
        let j = qrels("q", &[("r", 1)]);
        let ids: Vec<String> = (0..1000).map(|i| format!("x{i:04}")).chain(["r".to_string()]).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        assert_eq!(reciprocal_rank(&run("q", &refs), &j, &CFG).unwrap(), 0.0);
    }

    #[test]
    fn ap_examples() {
        let j = qrels("q", &[("r", 2)]);
        assert_eq!(average_precision(&run("q", &["r"]), &j, &CFG).unwrap(), 1.0);
        assert_eq!(average_precision(&run("q", &["a"]), &j, &CFG).unwrap(), 0.0);
        let j = qrels("q", &[("r1", 1), ("r2", 1)]);
        let ap = average_precision(&run("q", &["r1", "x", "r2"]), &j, &CFG).unwrap();
        assert_eq!(ap, (1.0 + 2.0 / 3.0) / 2.0);
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn ndcg_examples() {
        let j = qrels("q", &[("a", 3)]);
        assert_eq!(ndcg_at(&run("q", &["a"]), &j, 1, &CFG).unwrap(), 1.0);
        let j = qrels("q", &[("a", 0), ("b", 3), ("c", 1)]);
        let got = ndcg_at(&run("q", &["a", "b", "c"]), &j, 3, &CFG).unwrap();
        let dcg = 7.0 / 3f64.log2() + 1.0 / 2.0;
        let idcg = 7.0 + 1.0 / 3f64.log2();
        assert!((got - dcg / idcg).abs() < 1e-12);
        assert!((got - 0.644_287).abs() < 1e-6, "{got}");
        let perfect = ndcg_at(&run("q", &["b", "c", "a"]), &j, 10, &CFG).unwrap();
        assert!((perfect - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ndcg_zero_when_nothing_to_gain() {
        let j = qrels("q", &[("a", 0)]);
        assert_eq!(ndcg_at(&run("q", &["a"]), &j, 3, &CFG).unwrap(), 0.0);
    }

    #[test]
    fn recall_examples() {
        let j = qrels("q", &[("r1", 1), ("r2", 3)]);
        assert_eq!(recall_at(&run("q", &["r1", "r2"]), &j, 1000, &CFG).unwrap(), 1.0);
        assert_eq!(recall_at(&run("q", &["r1", "x"]), &j, 1000, &CFG).unwrap(), 0.5);
    }

    #[test]
    fn threshold_changes_binarisation() {
        let j = qrels("q", &[("a", 1), ("b", 2)]);
        let cfg = MetricConfig {
            binary_threshold: 2,
            ..CFG
        };
        assert_eq!(reciprocal_rank(&run("q", &["a", "b"]), &j, &cfg).unwrap(), 0.5);
    }

    #[test]
    fn unknown_query() {
        let j = qrels("q", &[("a", 1)]);
        assert!(matches!(
            reciprocal_rank(&run("other", &["a"]), &j, &CFG),
            Err(Error::UnknownQuery(q)) if q == "other"
        ));
    }

    #[test]
    fn queries_without_relevant_are_excluded() {
        let mut j = qrels("q1", &[("a", 1)]);
        j.insert("q2", "b", 0).unwrap();
        let runs = vec![run("q1", &["a"]), run("q2", &["b"]), run("q3", &["c"])];
        let report = evaluate(&runs, &j, &[Metric::Map, Metric::Ndcg(10)], &CFG).unwrap();
        assert_eq!(report.mean(Metric::Map), Some(1.0));
        assert_eq!(report.skipped, ["q2", "q3"]);
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "query_id,metric,value\nq1,map,1.0000\nq1,ndcg@10,1.0000\nALL,map,1.0000\nALL,ndcg@10,1.0000\n"
        );
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::standard() {
            assert_eq!(m.to_string().parse::<Metric>().unwrap(), m);
        }
        assert!("ndcg@0".parse::<Metric>().is_err());
        assert!("p@10".parse::<Metric>().is_err());
        assert_eq!(
            Metric::parse_list("map,rr,ndcg@10,recall@1000").unwrap(),
            vec![Metric::Map, Metric::Rr, Metric::Ndcg(10), Metric::Recall(1000)]
        );
    }

    #[test]
    fn t_test_conventions() {
        let a = [0.1, 0.5, 0.9];
        assert_eq!(paired_t_test(&a, &a).unwrap(), TTest { t: 0.0, p: 1.0, df: 2 });
        assert!(matches!(
            paired_t_test(&[2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(paired_t_test(&[1.0], &[0.0]).is_err());
        assert!(paired_t_test(&[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn t_test_symmetry() {
        let a = [0.3, 0.9, 0.4, 0.7];
        let b = [0.1, 0.5, 0.6, 0.2];
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        assert_eq!(ab.t, -ba.t);
        assert_eq!(ab.p, ba.p);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x; I_x(a, 1) = x^a; I_x(1, b) = 1 - (1 - x)^b.
        for &x in &[0.01, 0.3, 0.5, 0.77, 0.999] {
            assert!((regularized_incomplete_beta(1.0, 1.0, x) - x).abs() < 1e-13);
            assert!((regularized_incomplete_beta(3.5, 1.0, x) - x.powf(3.5)).abs() < 1e-13);
            assert!((regularized_incomplete_beta(1.0, 4.0, x) - (1.0 - (1.0 - x).powi(4))).abs() < 1e-13);
        }
        // t with 1 df is Cauchy: P(|T| > t) = 1 - 2 atan(t) / pi.
        for &t in &[0.1, 1.0, 4.2, 30.0] {
            let exact = 1.0 - 2.0 * f64::atan(t) / std::f64::consts::PI;
            assert!((student_t_two_tailed(t, 1.0) - exact).abs() < 1e-12);
        }
    }
}
