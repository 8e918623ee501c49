//! Ablation sweeps: relabel a manifest under configuration variants and
//! compare mAP against each group's default row.

use crate::config::{Config, PriorChoice};
use crate::dataset::{evaluate_dirs, label_dataset};
use crate::error::{Error, Result};
use crate::pipeline::{ErosionMode, YawEstimator};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const ALL_GROUPS: [&str; 7] = ["naive", "erosion", "yaw", "priors", "loss", "tau1", "tau2"];

/// One configuration of a group. `apply` edits a copy of the base config.
pub struct Variant {
    pub group: &'static str,
    pub name: String,
    pub is_default: bool,
    apply: Box<dyn Fn(&mut Config) + Send + Sync>,
}

impl Variant {
    fn new(
        group: &'static str,
        name: impl Into<String>,
        is_default: bool,
        apply: impl Fn(&mut Config) + Send + Sync + 'static,
    ) -> Self {
        Self {
            group,
            name: name.into(),
            is_default,
            apply: Box::new(apply),
        }
    }

    pub fn key(&self) -> String {
        format!("{}:{}", self.group, self.name)
    }

    pub fn configure(&self, base: &Config) -> Config {
        let mut c = base.clone();
        (self.apply)(&mut c);
        c
    }
}

/// Every variant of `group`, default row included.
pub fn group_variants(group: &str, base: &Config) -> Result<Vec<Variant>> {
    let v = match group {
        "naive" => vec![
            Variant::new("naive", "naive", false, |c| {
                c.erosion_mode = ErosionMode::None;
                c.gating = false;
            }),
            Variant::new("naive", "full", true, |_| {}),
        ],
        "erosion" => vec![
            Variant::new("erosion", "fixed", false, |c| {
                c.erosion_mode = ErosionMode::Fixed
            }),
            Variant::new("erosion", "adaptive", true, |c| {
                c.erosion_mode = ErosionMode::Adaptive
            }),
        ],
        "yaw" => vec![
            Variant::new("yaw", "pca", base.yaw_estimator == YawEstimator::Pca, |c| {
                c.yaw_estimator = YawEstimator::Pca
            }),
            Variant::new(
                "yaw",
                "histogram",
                base.yaw_estimator == YawEstimator::Histogram,
                |c| c.yaw_estimator = YawEstimator::Histogram,
            ),
        ],
        "priors" => vec![
            Variant::new("priors", "none", base.priors == PriorChoice::None, |c| {
                c.priors = PriorChoice::None
            }),
            Variant::new("priors", "llm", base.priors == PriorChoice::Llm, |c| {
                c.priors = PriorChoice::Llm
            }),
            Variant::new("priors", "stats", base.priors == PriorChoice::Stats, |c| {
                c.priors = PriorChoice::Stats
            }),
        ],
        "loss" => {
            let (l_out, l_in, tw) = (base.lambda_outdoor, base.lambda_indoor, base.trace_weight);
            vec![
                Variant::new("loss", "trace", false, move |c| {
                    c.lambda_outdoor = 0.0;
                    c.lambda_indoor = 0.0;
                    c.trace_weight = tw;
                }),
                Variant::new("loss", "ratio", false, move |c| {
                    c.trace_weight = 0.0;
                    c.lambda_outdoor = l_out;
                    c.lambda_indoor = l_in;
                }),
                Variant::new("loss", "trace+ratio", true, |_| {}),
            ]
        }
        "tau1" => [0.6, 0.7, 0.8, 0.9]
            .into_iter()
            .map(|t| {
                Variant::new("tau1", format!("{t:.1}"), t == base.tau1, move |c| {
                    c.tau1 = t
                })
            })
            .collect(),
        "tau2" => [1.1, 1.2, 1.3, 1.4]
            .into_iter()
            .map(|t| {
                Variant::new("tau2", format!("{t:.1}"), t == base.tau2, move |c| {
                    c.tau2 = t
                })
            })
            .collect(),
        other => return Err(Error::Config(format!("unknown ablate group `{other}`"))),
    };
    Ok(v)
}

/// Expands `ablate_groups`: a bare group name selects all its variants,
/// `group:variant` selects one.
pub fn select_variants(base: &Config) -> Result<Vec<Variant>> {
    let mut out = Vec::new();
    for spec in &base.ablate_groups {
        let (group, only) = match spec.split_once(':') {
            Some((g, v)) => (g, Some(v)),
            None => (spec.as_str(), None),
        };
        let vs = group_variants(group, base)?;
        match only {
            None => out.extend(vs),
            Some(name) => {
                let v = vs
                    .into_iter()
                    .find(|v| v.name == name)
                    .ok_or_else(|| Error::Config(format!("unknown ablate variant `{spec}`")))?;
                out.push(v);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub group: String,
    pub variant: String,
    pub is_default: bool,
    pub map: f64,
    /// `map` minus the group's default row; `None` without a comparison.
    pub delta: Option<f64>,
    pub labels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, group: &str, variant: &str) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.group == group && r.variant == variant)
    }

    pub fn table(&self) -> String {
        use std::fmt::Write;
        let compare = self.rows.iter().any(|r| r.delta.is_some());
        let mut s = String::new();
        if compare {
            let _ = writeln!(
                s,
                "{:<8} {:<12} {:>8} {:>8}",
                "group", "variant", "mAP3D", "delta"
            );
        } else {
            let _ = writeln!(s, "{:<8} {:<12} {:>8}", "group", "variant", "mAP3D");
        }
        for r in &self.rows {
            let name = if r.is_default {
                format!("{}*", r.variant)
            } else {
                r.variant.clone()
            };
            let _ = write!(s, "{:<8} {:<12} {:>8.4}", r.group, name, r.map);
            if compare {
                match r.delta {
                    Some(d) => {
                        let _ = write!(s, " {:>+8.4}", d);
                    }
                    None => {
                        let _ = write!(s, " {:>8}", "-");
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Labels `manifest` once per selected variant under `out_dir/<group>_<variant>`
/// and scores each run against `gt_dir`.
pub fn run_ablation(
    manifest: &Path,
    gt_dir: &Path,
    base: &Config,
    out_dir: &Path,
) -> Result<AblationReport> {
    if !gt_dir.is_dir() {
        return Err(Error::InvalidInput(format!(
            "ground-truth directory {} not found",
            gt_dir.display()
        )));
    }
    let variants = select_variants(base)?;
    let mut rows = Vec::with_capacity(variants.len());
    // Variants sharing a configuration share one labeling run.
    let mut cache: Vec<(String, f64, usize)> = Vec::new();
    for v in &variants {
        let cfg = v.configure(base);
        cfg.validate()?;
        let fingerprint = cfg.to_toml();
        let (map, labels) = match cache.iter().find(|(f, _, _)| *f == fingerprint) {
            Some((_, m, n)) => (*m, *n),
            None => {
                let dir = out_dir.join(format!("{}_{}", v.group, v.name.replace(['+', '.'], "_")));
                log::info!("ablation {}: labeling into {}", v.key(), dir.display());
                let summary = label_dataset(manifest, &cfg, &dir)?;
                let (res, _) = evaluate_dirs(&dir, gt_dir, &cfg)?;
                cache.push((fingerprint, res.map, summary.labels));
                (res.map, summary.labels)
            }
        };
        rows.push(AblationRow {
            group: v.group.to_string(),
            variant: v.name.clone(),
            is_default: v.is_default,
            map,
            delta: None,
            labels,
        });
    }
    if rows.len() > 1 {
        let defaults: Vec<(String, f64)> = rows
            .iter()
            .filter(|r| r.is_default)
            .map(|r| (r.group.clone(), r.map))
            .collect();
        for r in &mut rows {
            r.delta = defaults
                .iter()
                .find(|(g, _)| *g == r.group)
                .map(|(_, m)| r.map - m);
        }
    }
    Ok(AblationReport { rows })
}
