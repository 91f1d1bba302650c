//! Grid sweeps over feedback depth, Rocchio weights, text handling and
//! score aggregation.
//!
//! First stages are computed once per query and shared by every grid point;
//! for text feedback the per-variant rankings are also shared across
//! aggregation methods.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalReport, Metric, MetricConfig};
use crate::lexical::Query;
use crate::pipelines::{combine_text_lists, FirstStage, Flow, Pipeline, TextPrfConfig};
use crate::prf_text::{AggregationMethod, TextHandling, WindowSpec};
use crate::prf_vector::{PrfVectorConfig, VectorFusion};
use crate::ranking::RankedList;
use crate::trec::{save_run, Judgments};

/// `"start:stop:step"` (inclusive) or a comma-separated list.
pub fn parse_real_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidConfig(format!("bad grid {spec:?}"));
    let values: Vec<f64> = if spec.contains(':') {
        let parts: Vec<f64> = spec
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else {
            return Err(bad());
        };
        if step.is_nan() || step <= 0.0 || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| round_grid(start + i as f64 * step)).collect()
    } else {
        spec.split(',')
            .map(|p| p.trim().parse::<f64>().map(round_grid).map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    Ok(values)
}

fn round_grid(x: f64) -> f64 {
    (x * 1e10).round() / 1e10
}

pub fn parse_depth_grid(spec: &str) -> Result<Vec<usize>> {
    let values: Vec<usize> = spec
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .ok()
                .filter(|&k| k >= 1)
                .ok_or_else(|| Error::InvalidConfig(format!("bad depth grid {spec:?}")))
        })
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::InvalidConfig("empty depth grid".into()));
    }
    Ok(values)
}

pub fn parse_list<T: std::str::FromStr<Err = Error>>(spec: &str) -> Result<Vec<T>> {
    let values: Vec<T> = spec.split(',').map(|p| p.trim().parse()).collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::InvalidConfig("empty grid".into()));
    }
    Ok(values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub depths: Vec<usize>,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub handlings: Vec<TextHandling>,
    pub aggregations: Vec<AggregationMethod>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        let weights: Vec<f64> = (1..=10).map(|i| round_grid(f64::from(i) * 0.1)).collect();
        Self {
            depths: vec![1, 3, 5, 10],
            alphas: weights.clone(),
            betas: weights,
            handlings: vec![
                TextHandling::ConcatTruncate,
                TextHandling::ConcatAggregate,
                TextHandling::SlidingWindow,
            ],
            aggregations: vec![
                AggregationMethod::Average,
                AggregationMethod::Max,
                AggregationMethod::Borda,
            ],
        }
    }
}

/// One configuration of the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub k: usize,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub handling: Option<TextHandling>,
    pub aggregation: Option<AggregationMethod>,
}

impl SweepPoint {
    /// File-name friendly label, e.g. `k10-a0.4-b0.6` or `k3-ca-borda`.
    pub fn label(&self) -> String {
        let mut s = format!("k{}", self.k);
        if let Some(a) = self.alpha {
            s += &format!("-a{a}");
        }
        if let Some(b) = self.beta {
            s += &format!("-b{b}");
        }
        if let Some(h) = self.handling {
            s += &format!("-{h}");
        }
        if let Some(m) = self.aggregation {
            s += &format!("-{m}");
        }
        s
    }
}

impl fmt::Display for SweepPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

enum Family {
    Vector { rocchio: bool },
    Text { window: WindowSpec },
}

fn family(flow: Flow) -> Result<Family> {
    match flow {
        Flow::DenseRetrievePrf(c) | Flow::RerankVectorPrf(c) => Ok(Family::Vector {
            rocchio: matches!(c.fusion, VectorFusion::Rocchio { .. }),
        }),
        Flow::RerankTextPrf(c) => Ok(Family::Text { window: c.window }),
        other => Err(Error::InvalidConfig(format!(
            "flow {other} has no feedback parameters to sweep"
        ))),
    }
}

/// Grid points in sweep order. Concatenate-truncate ignores the aggregation
/// grid; average fusion ignores the weight grids.
pub fn expand_grid(flow: Flow, grid: &SweepGrid) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::new();
    let base = |k| SweepPoint {
        k,
        alpha: None,
        beta: None,
        handling: None,
        aggregation: None,
    };
    match family(flow)? {
        Family::Vector { rocchio: false, .. } => points.extend(grid.depths.iter().map(|&k| base(k))),
        Family::Vector { rocchio: true, .. } => {
            for &k in &grid.depths {
                for &a in &grid.alphas {
                    for &b in &grid.betas {
                        points.push(SweepPoint {
                            alpha: Some(a),
                            beta: Some(b),
                            ..base(k)
                        });
                    }
                }
            }
        }
        Family::Text { .. } => {
            for &k in &grid.depths {
                for &h in &grid.handlings {
                    if h == TextHandling::ConcatTruncate {
                        points.push(SweepPoint {
                            handling: Some(h),
                            ..base(k)
                        });
                        continue;
                    }
                    for &m in &grid.aggregations {
                        points.push(SweepPoint {
                            handling: Some(h),
                            aggregation: Some(m),
                            ..base(k)
                        });
                    }
                }
            }
        }
    }
    if points.is_empty() {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    Ok(points)
}

fn point_flow(flow: Flow, p: &SweepPoint) -> Flow {
    match flow {
        Flow::DenseRetrievePrf(_) | Flow::RerankVectorPrf(_) => {
            let fusion = match (p.alpha, p.beta) {
                (Some(alpha), Some(beta)) => VectorFusion::Rocchio { alpha, beta },
                _ => VectorFusion::Average,
            };
            let cfg = PrfVectorConfig { fusion, depth: p.k };
            if matches!(flow, Flow::DenseRetrievePrf(_)) {
                Flow::DenseRetrievePrf(cfg)
            } else {
                Flow::RerankVectorPrf(cfg)
            }
        }
        Flow::RerankTextPrf(c) => Flow::RerankTextPrf(TextPrfConfig {
            handling: p.handling.unwrap_or(c.handling),
            aggregation: p.aggregation.unwrap_or(c.aggregation),
            depth: p.k,
            window: c.window,
        }),
        other => other,
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub point: SweepPoint,
    pub flow: Flow,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub sort_metric: Metric,
    /// Best first by the sort metric's mean; ties keep grid order.
    pub outcomes: Vec<SweepOutcome>,
}

impl SweepReport {
    pub fn best(&self) -> Option<&SweepOutcome> {
        self.outcomes.first()
    }

    /// `k,alpha,beta,handling,aggregate,metric,value`; inapplicable columns
    /// are left empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,alpha,beta,handling,aggregate,metric,value")?;
        for o in &self.outcomes {
            let p = &o.point;
            for m in &o.report.metrics {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{:.4}",
                    p.k,
                    opt(p.alpha),
                    opt(p.beta),
                    opt(p.handling),
                    opt(p.aggregation),
                    m,
                    o.report.mean(*m).unwrap_or(0.0)
                )?;
            }
        }
        Ok(())
    }
}

pub struct SweepRequest<'a> {
    pub queries: &'a [Query],
    pub judgments: &'a Judgments,
    pub metrics: &'a [Metric],
    pub metric_config: MetricConfig,
    pub sort_metric: Metric,
    /// When set, one TREC run file per grid point is written here.
    pub run_dir: Option<&'a Path>,
}

/// Runs every grid point of `pipeline`'s flow family.
pub fn run_sweep(pipeline: &Pipeline<'_>, grid: &SweepGrid, req: &SweepRequest<'_>) -> Result<SweepReport> {
    let points = expand_grid(pipeline.flow, grid)?;
    let mut metrics = req.metrics.to_vec();
    if !metrics.contains(&req.sort_metric) {
        metrics.push(req.sort_metric);
    }
    let max_depth = points.iter().map(|p| p.k).max().unwrap_or(1);
    if max_depth > pipeline.config.first_stage_k {
        return Err(Error::InvalidConfig(format!(
            "depth {max_depth} exceeds first-stage k {}",
            pipeline.config.first_stage_k
        )));
    }

    let firsts: Vec<FirstStage> = req
        .queries
        .par_iter()
        .map(|q| pipeline.first_stage(q))
        .collect::<Result<_>>()?;

    let mut outcomes = Vec::with_capacity(points.len());
    let mut finish = |point: SweepPoint, runs: Vec<RankedList>| -> Result<()> {
        let flow = point_flow(pipeline.flow, &point);
        if let Some(dir) = req.run_dir {
            let tag = format!("{}-{}", pipeline.config.run_tag, point.label());
            save_run(dir.join(format!("{}.run", point.label())), &runs, &tag)?;
        }
        let report = evaluate(&runs, req.judgments, &metrics, &req.metric_config)?;
        outcomes.push(SweepOutcome { point, flow, report });
        Ok(())
    };

    match family(pipeline.flow)? {
        Family::Vector { .. } => {
            for point in points {
                let flow = point_flow(pipeline.flow, &point);
                let runs = req
                    .queries
                    .par_iter()
                    .zip(&firsts)
                    .map(|(q, first)| pipeline.rerun(flow, q, first))
                    .collect::<Result<Vec<_>>>()?;
                finish(point, runs)?;
            }
        }
        Family::Text { window } => {
            let mut i = 0;
            while i < points.len() {
                let (k, handling) = (points[i].k, points[i].handling.expect("text point"));
                let group_end = points[i..]
                    .iter()
                    .position(|p| p.k != k || p.handling != Some(handling))
                    .map_or(points.len(), |n| i + n);
                let variant_lists: Vec<Vec<RankedList>> = req
                    .queries
                    .par_iter()
                    .zip(&firsts)
                    .map(|(q, first)| {
                        if first.list.is_empty() {
                            return Ok(Vec::new());
                        }
                        let variants = pipeline.text_variants(q, first, k, handling, window)?;
                        pipeline.score_variants(q, first, &variants)
                    })
                    .collect::<Result<_>>()?;
                for point in &points[i..group_end] {
                    let aggregation = point.aggregation.unwrap_or(AggregationMethod::Average);
                    let runs = variant_lists
                        .iter()
                        .zip(&firsts)
                        .map(|(lists, first)| {
                            if lists.is_empty() {
                                Ok(first.list.clone())
                            } else {
                                combine_text_lists(handling, aggregation, lists.clone())
                            }
                        })
                        .collect::<Result<Vec<_>>>()?;
                    finish(*point, runs)?;
                }
                i = group_end;
            }
        }
    }

    let key = req.sort_metric;
    outcomes.sort_by(|a, b| {
        let (x, y) = (a.report.mean(key).unwrap_or(0.0), b.report.mean(key).unwrap_or(0.0));
        y.total_cmp(&x)
    });
    Ok(SweepReport {
        sort_metric: key,
        outcomes,
    })
}
