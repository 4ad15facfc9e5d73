//! Hyper-ribbon dimension over a `(T, c, σ*/σw)` grid, and iso-dimension
//! contours on its `(T, c)` slices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::TrainConfig;
use crate::error::{Error, Result};
use crate::manifold::{analytic_pca, hyper_ribbon_dim};
use crate::specgen::{synthesize_dataset, DatasetSpec};

/// Named `σ*/σw` slices.
pub const PRESET_RATIOS: [(&str, f64); 3] = [("fig7a", 4.38), ("fig7b", 1.32), ("fig7c", 0.33)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum AlphaRule {
    /// `α = 1/λ₁`.
    InverseLambda1,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseGridSpec {
    #[serde(rename = "T_values")]
    pub t_values: Vec<usize>,
    pub c_values: Vec<f64>,
    pub ratio_values: Vec<f64>,
    pub n: usize,
    pub d: usize,
    pub alpha_rule: AlphaRule,
    /// `σw²`; each cell uses `σ*² = ratio² σw²`.
    pub sigma_w_sq: f64,
    pub threshold: f64,
    pub seed: u64,
}

/// `count` points from `lo` to `hi`, evenly spaced in log scale.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (count - 1) as f64).exp())
            .collect(),
    }
}

pub fn lin_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Log-spaced integers from `lo` to `hi`, rounded and deduplicated.
pub fn log_space_int(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    let mut v: Vec<usize> = log_space(lo as f64, hi as f64, count)
        .into_iter()
        .map(|x| x.round().max(1.0) as usize)
        .collect();
    v.dedup();
    v
}

impl Default for PhaseGridSpec {
    fn default() -> Self {
        PhaseGridSpec {
            t_values: log_space_int(1, 10_000, 20),
            // The lower end keeps c n > 1 at n = 50.
            c_values: lin_space(0.03, 1.0, 20),
            ratio_values: log_space(0.1, 10.0, 10),
            n: 50,
            d: 100,
            alpha_rule: AlphaRule::InverseLambda1,
            sigma_w_sq: 1.0,
            threshold: 0.95,
            seed: 7,
        }
    }
}

impl PhaseGridSpec {
    /// The default grid restricted to one named ratio (or all three for
    /// `fig7`).
    pub fn preset(name: &str) -> Option<Self> {
        let ratios: Vec<f64> = if name == "fig7" {
            PRESET_RATIOS.iter().rev().map(|p| p.1).collect()
        } else {
            vec![PRESET_RATIOS.iter().find(|p| p.0 == name)?.1]
        };
        Some(PhaseGridSpec {
            ratio_values: ratios,
            ..Default::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        fn increasing<T: PartialOrd>(name: &str, v: &[T]) -> Result<()> {
            if v.is_empty() {
                return Err(Error::InvalidConfig(format!("axis {name} is empty")));
            }
            if v.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidConfig(format!("axis {name} must be strictly increasing")));
            }
            Ok(())
        }
        increasing("T_values", &self.t_values)?;
        increasing("c_values", &self.c_values)?;
        increasing("ratio_values", &self.ratio_values)?;
        if self.t_values[0] == 0 {
            return Err(Error::InvalidConfig("T values must be positive".into()));
        }
        if !(self.c_values[0] * self.n as f64 > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "c values must exceed 1/n = {}, got {}",
                1.0 / self.n as f64,
                self.c_values[0]
            )));
        }
        if !(self.ratio_values[0] > 0.0) || self.ratio_values.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidConfig("ratio values must be positive and finite".into()));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold must lie in (0, 1], got {}",
                self.threshold
            )));
        }
        if !(self.sigma_w_sq > 0.0) || !self.sigma_w_sq.is_finite() {
            return Err(Error::InvalidConfig("sigma_w_sq anchor must be positive".into()));
        }
        if let AlphaRule::Fixed(a) = self.alpha_rule {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::InvalidConfig(format!("fixed step size must be positive, got {a}")));
            }
        }
        DatasetSpec {
            n: self.n,
            d: self.d,
            c: self.c_values[0],
            sigma_star_sq: 1.0,
            sigma_w_sq: self.sigma_w_sq,
            seed: self.seed,
        }
        .validate()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.t_values.len(), self.c_values.len(), self.ratio_values.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub t_index: usize,
    pub c_index: usize,
    pub ratio_index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub spec: PhaseGridSpec,
    /// Row-major `[T][c][ratio]`; `None` marks a failed cell.
    pub dims: Vec<Option<usize>>,
    pub errors: Vec<CellError>,
}

impl PhaseGrid {
    pub fn index(&self, t: usize, c: usize, r: usize) -> usize {
        let (_, nc, nr) = self.spec.shape();
        (t * nc + c) * nr + r
    }

    pub fn dim(&self, t: usize, c: usize, r: usize) -> Option<usize> {
        self.dims[self.index(t, c, r)]
    }

    /// Most common dimension on one ratio slice (smallest on ties).
    pub fn modal_dim(&self, r: usize) -> Option<usize> {
        let (nt, nc, _) = self.spec.shape();
        let mut counts = BTreeMap::new();
        for t in 0..nt {
            for c in 0..nc {
                if let Some(d) = self.dim(t, c, r) {
                    *counts.entry(d).or_insert(0usize) += 1;
                }
            }
        }
        let best = counts.values().copied().max()?;
        counts.into_iter().find(|&(_, n)| n == best).map(|(d, _)| d)
    }

    pub fn all_failed(&self) -> bool {
        self.dims.iter().all(Option::is_none)
    }

    /// Long-format CSV: `T,c,ratio,dim`, with an empty dim for failed cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("T,c,ratio,dim\n");
        let (nt, nc, nr) = self.spec.shape();
        for t in 0..nt {
            for c in 0..nc {
                for r in 0..nr {
                    let dim = self.dim(t, c, r).map(|d| d.to_string()).unwrap_or_default();
                    let _ = writeln!(
                        out,
                        "{},{},{},{}",
                        self.spec.t_values[t], self.spec.c_values[c], self.spec.ratio_values[r], dim
                    );
                }
            }
        }
        out
    }

    /// Heatmap of one ratio slice: T on a log x axis, c on the y axis.
    pub fn slice_svg(&self, r: usize) -> String {
        let (nt, nc, _) = self.spec.shape();
        let (cw, ch, left, top) = (24.0, 18.0, 70.0, 40.0);
        let width = left + cw * nt as f64 + 90.0;
        let height = top + ch * nc as f64 + 60.0;
        let max_dim = self.dims.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{left}" y="20" font-size="12">hyper-ribbon dimension, sigma*/sigma_w = {}</text>"#,
            self.spec.ratio_values[r]
        );
        for t in 0..nt {
            for c in 0..nc {
                let x = left + cw * t as f64;
                // Larger c at the top.
                let y = top + ch * (nc - 1 - c) as f64;
                let (fill, label) = match self.dim(t, c, r) {
                    Some(d) => (ramp(d as f64 / max_dim), d.to_string()),
                    None => ("#999999".to_string(), "x".to_string()),
                };
                let _ = writeln!(
                    s,
                    r#"<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{fill}"><title>T={} c={:.3} dim={label}</title></rect>"#,
                    self.spec.t_values[t], self.spec.c_values[c]
                );
            }
        }
        let base = top + ch * nc as f64;
        for t in (0..nt).step_by(((nt + 4) / 5).max(1)) {
            let x = left + cw * (t as f64 + 0.5);
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
                base + 14.0,
                self.spec.t_values[t]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">T (log scale)</text>"#,
            left + cw * nt as f64 / 2.0,
            base + 32.0
        );
        for c in (0..nc).step_by(((nc + 4) / 5).max(1)) {
            let y = top + ch * ((nc - 1 - c) as f64 + 0.5) + 3.0;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{y}" text-anchor="end">{:.2}</text>"#,
                left - 6.0,
                self.spec.c_values[c]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">c</text>"#,
            top + ch * nc as f64 / 2.0,
            top + ch * nc as f64 / 2.0
        );
        // Color bar.
        let bx = left + cw * nt as f64 + 20.0;
        for k in 0..10 {
            let f = k as f64 / 9.0;
            let y = top + ch * nc as f64 * (1.0 - (k + 1) as f64 / 10.0);
            let _ = writeln!(
                s,
                r#"<rect x="{bx}" y="{y}" width="14" height="{}" fill="{}"/>"#,
                ch * nc as f64 / 10.0,
                ramp(f)
            );
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, bx + 18.0, top + 8.0, max_dim);
        let _ = writeln!(s, r#"<text x="{}" y="{}">0</text>"#, bx + 18.0, base);
        s.push_str("</svg>\n");
        s
    }
}

/// Linear dark-blue to yellow ramp.
fn ramp(f: f64) -> String {
    let f = f.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(30.0, 250.0), lerp(40.0, 230.0), lerp(110.0, 40.0))
}

/// Hyper-ribbon dimension at every grid cell, from the closed-form PCA.
pub fn sweep(spec: &PhaseGridSpec) -> Result<PhaseGrid> {
    spec.validate()?;
    let (nt, nc, nr) = spec.shape();
    let cells: Vec<std::result::Result<usize, String>> = (0..nt * nc * nr)
        .into_par_iter()
        .map(|k| {
            let (t, rest) = (k / (nc * nr), k % (nc * nr));
            let (c, r) = (rest / nr, rest % nr);
            cell_dim(spec, spec.t_values[t], spec.c_values[c], spec.ratio_values[r]).map_err(|e| e.to_string())
        })
        .collect();
    let mut dims = Vec::with_capacity(cells.len());
    let mut errors = Vec::new();
    for (k, cell) in cells.into_iter().enumerate() {
        match cell {
            Ok(d) => dims.push(Some(d)),
            Err(message) => {
                let (t, rest) = (k / (nc * nr), k % (nc * nr));
                errors.push(CellError {
                    t_index: t,
                    c_index: rest / nr,
                    ratio_index: rest % nr,
                    message,
                });
                dims.push(None);
            }
        }
    }
    Ok(PhaseGrid {
        spec: spec.clone(),
        dims,
        errors,
    })
}

fn cell_dim(spec: &PhaseGridSpec, steps: usize, c: f64, ratio: f64) -> Result<usize> {
    let ds = synthesize_dataset(&DatasetSpec {
        n: spec.n,
        d: spec.d,
        c,
        sigma_star_sq: ratio * ratio * spec.sigma_w_sq,
        sigma_w_sq: spec.sigma_w_sq,
        seed: spec.seed,
    })?;
    let alpha = match spec.alpha_rule {
        AlphaRule::InverseLambda1 => 1.0 / ds.lambda_1(),
        AlphaRule::Fixed(a) => a,
    };
    let pca = analytic_pca(&ds, &TrainConfig::gd(alpha, steps, 1))?;
    let dim = hyper_ribbon_dim(&pca.lambda_p, spec.threshold)?;
    if dim.degenerate {
        return Err(Error::BoundUndefined("PCA spectrum is identically zero".into()));
    }
    Ok(dim.dim)
}

/// Polylines separating `dims ≤ level` from the rest on one ratio slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceContours {
    pub ratio: f64,
    pub level: usize,
    /// Points are `(T, c)`.
    pub polylines: Vec<Vec<(f64, f64)>>,
}

/// Grid node, `(T index, c index)`.
type Node = (usize, usize);
/// Cell edge between two adjacent nodes, smaller node first.
type Edge = (Node, Node);

fn edge(a: Node, b: Node) -> Edge {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Marching-squares boundaries of `{dims ≤ level}` on every `(T, c)` slice.
/// Failed cells count as outside. Crossing points sit halfway along cell
/// edges, geometrically in `T` and arithmetically in `c`.
pub fn extract_isosurface(grid: &PhaseGrid, level: usize) -> Result<Vec<SliceContours>> {
    if level == 0 {
        return Err(Error::InvalidConfig("contour level must be at least 1".into()));
    }
    let (nt, nc, nr) = grid.spec.shape();
    Ok((0..nr)
        .map(|r| {
            let inside = |(t, c): Node| grid.dim(t, c, r).is_some_and(|d| d <= level);
            let value = |(t, c): Node| grid.dim(t, c, r).map_or(f64::INFINITY, |d| d as f64);
            let mut segments: Vec<(Edge, Edge)> = Vec::new();
            for t in 0..nt.saturating_sub(1) {
                for c in 0..nc.saturating_sub(1) {
                    // Corners counter-clockwise from the lower left.
                    let corners = [(t, c), (t + 1, c), (t + 1, c + 1), (t, c + 1)];
                    let ins: Vec<bool> = corners.iter().map(|&n| inside(n)).collect();
                    let sides: Vec<Edge> = (0..4).map(|k| edge(corners[k], corners[(k + 1) % 4])).collect();
                    let crossing: Vec<usize> = (0..4).filter(|&k| ins[k] != ins[(k + 1) % 4]).collect();
                    match crossing.len() {
                        2 => segments.push((sides[crossing[0]], sides[crossing[1]])),
                        4 => {
                            // Saddle: the cell center decides which diagonal
                            // pair is connected; the other pair is cut off.
                            let mean = corners.iter().map(|&n| value(n)).sum::<f64>() / 4.0;
                            let center_inside = mean <= level as f64;
                            for k in 0..4 {
                                if ins[k] != center_inside {
                                    segments.push((sides[(k + 3) % 4], sides[k]));
                                }
                            }
                        }
                        _ => {}
                    }
                }
            }
            let polylines = join_segments(&segments)
                .into_iter()
                .map(|chain| chain.iter().map(|e| edge_point(&grid.spec, e)).collect())
                .collect();
            SliceContours {
                ratio: grid.spec.ratio_values[r],
                level,
                polylines,
            }
        })
        .collect())
}

fn edge_point(spec: &PhaseGridSpec, e: &Edge) -> (f64, f64) {
    let ((t0, c0), (t1, c1)) = *e;
    let t = (spec.t_values[t0] as f64 * spec.t_values[t1] as f64).sqrt();
    let c = 0.5 * (spec.c_values[c0] + spec.c_values[c1]);
    (t, c)
}

/// Chains segments that share an edge crossing into polylines. Open chains
/// are started from their smallest free end; closed loops repeat their first
/// point at the end.
fn join_segments(segments: &[(Edge, Edge)]) -> Vec<Vec<Edge>> {
    let mut adj: BTreeMap<Edge, Vec<usize>> = BTreeMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        adj.entry(*a).or_default().push(k);
        adj.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut out = Vec::new();
    let ends: BTreeSet<Edge> = adj.iter().filter(|(_, v)| v.len() == 1).map(|(e, _)| *e).collect();
    let starts: Vec<Edge> = ends.iter().copied().chain(adj.keys().copied()).collect();
    for start in starts {
        while let Some(&seg) = adj[&start].iter().find(|&&s| !used[s]) {
            let mut chain = vec![start];
            let mut at = start;
            let mut next_seg = Some(seg);
            while let Some(s) = next_seg {
                used[s] = true;
                let (a, b) = segments[s];
                at = if a == at { b } else { a };
                chain.push(at);
                next_seg = adj[&at].iter().copied().find(|&k| !used[k]);
            }
            out.push(chain);
        }
    }
    out
}
