//! End-to-end glue: kernelize, train, fit hash functions, and convert the
//! result to and from a [`ModelArchive`].

use nalgebra::{DMatrix, DVector};

use crate::dataio::{ModelArchive, RawLabelMatrix};
use crate::encoder::{self, HashEncoder, ModalityEncoder, DEFAULT_LAMBDA_H};
use crate::error::{Error, Result};
use crate::kernelfeat::{KernelMap, DEFAULT_WIDTH_SAMPLE_CAP};
use crate::labelspace::normalize_labels;
use crate::retrieval::{self, CodeSet, MetricRow, RelevanceJudge};
use crate::seed;
use crate::trainer::{self, ModelState, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    /// Anchor count per modality.
    pub anchors: Vec<usize>,
    pub lambda_h: f64,
    pub width_sample_cap: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train: TrainConfig::default(),
            anchors: vec![500, 1000],
            lambda_h: DEFAULT_LAMBDA_H,
            width_sample_cap: DEFAULT_WIDTH_SAMPLE_CAP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: PipelineConfig,
    pub state: ModelState,
    pub encoder: HashEncoder,
    pub report: TrainReport,
}

/// Kernelize every modality; returns the maps and centered `n x k` features.
pub fn kernelize_modalities(
    features: &[&DMatrix<f64>],
    cfg: &PipelineConfig,
) -> Result<(Vec<KernelMap>, Vec<DMatrix<f64>>)> {
    if features.len() != cfg.anchors.len() {
        return Err(Error::Validation(format!(
            "{} modalities but {} anchor counts",
            features.len(),
            cfg.anchors.len()
        )));
    }
    let mut maps = Vec::with_capacity(features.len());
    let mut phis = Vec::with_capacity(features.len());
    for (t, (x, &k)) in features.iter().zip(&cfg.anchors).enumerate() {
        let sub_seed = seed::derive(cfg.train.seed, "kernel", t as u64 + 1);
        let (map, phi) = KernelMap::fit(x, k, sub_seed, cfg.width_sample_cap)
            .map_err(|e| annotate_modality(e, t + 1))?;
        maps.push(map);
        phis.push(phi);
    }
    Ok((maps, phis))
}

fn annotate_modality(err: Error, t: usize) -> Error {
    match err {
        Error::Validation(m) => Error::Validation(format!("modality {t}: {m}")),
        Error::Degenerate(m) => Error::Degenerate(format!("modality {t}: {m}")),
        other => other,
    }
}

/// Validate, kernelize, train and fit the out-of-sample hash functions.
pub fn fit(features: &[&DMatrix<f64>], labels: &RawLabelMatrix, cfg: &PipelineConfig) -> Result<TrainedModel> {
    for (t, x) in features.iter().enumerate() {
        if x.nrows() != labels.n() {
            return Err(Error::Validation(format!(
                "modality {} has {} rows but labels cover {} instances",
                t + 1,
                x.nrows(),
                labels.n()
            )));
        }
    }
    cfg.train.validate(features.len())?;
    let labelset = normalize_labels(labels);
    let (maps, phis) = kernelize_modalities(features, cfg)?;
    let (state, report) = trainer::train(&phis, &labelset, &cfg.train)?;
    let encoder = encoder::fit_encoder(maps, &phis, &state.b, cfg.lambda_h)?;
    Ok(TrainedModel {
        config: cfg.clone(),
        state,
        encoder,
        report,
    })
}

fn join_reals(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

fn parse_reals(text: &str) -> Result<Vec<f64>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Format(format!("cannot parse {s:?} as a real")))
        })
        .collect()
}

impl TrainedModel {
    pub fn encode(&self, x_raw: &DMatrix<f64>, modality: usize) -> Result<CodeSet> {
        let projected = encoder::project(x_raw, self.encoder.modality(modality)?)?;
        Ok(CodeSet::from_signs(&projected.map(crate::linalg::sign)))
    }

    /// The trained codes of the training set.
    pub fn training_codes(&self) -> CodeSet {
        CodeSet::from_signs(&self.state.b.transpose())
    }

    pub fn to_archive(&self) -> ModelArchive {
        let mut a = ModelArchive::new();
        a.insert("V", self.state.v.clone());
        a.insert("R", self.state.rot.clone());
        a.insert("M", self.state.m.clone());
        a.insert("B", self.state.b.clone());
        for (t, (p, enc)) in self.state.p.iter().zip(&self.encoder.modalities).enumerate() {
            let t = t + 1;
            a.insert(format!("P_{t}"), p.clone());
            a.insert(format!("Ph_{t}"), enc.p_h.clone());
            a.insert(format!("anchors_{t}"), enc.kernel.anchors().clone());
            let center = enc.kernel.center();
            a.insert(format!("kcenter_{t}"), DMatrix::from_column_slice(1, center.len(), center.as_slice()));
        }
        let cfg = &self.config;
        a.set_meta("modalities", self.state.p.len());
        a.set_meta("r", cfg.train.bits);
        a.set_meta("omega", format!("{:?}", cfg.train.omega));
        a.set_meta("lambda_h", format!("{:?}", cfg.lambda_h));
        a.set_meta("seed", cfg.train.seed);
        a.set_meta("max_iters", cfg.train.max_iters);
        a.set_meta("rel_tol", format!("{:?}", cfg.train.rel_tol));
        a.set_meta("width_sample_cap", cfg.width_sample_cap);
        a.set_meta("iterations", self.report.iterations_run);
        a.set_meta("converged", self.report.converged);
        a.set_meta("objective_history", join_reals(&self.report.objective_history));
        for (t, enc) in self.encoder.modalities.iter().enumerate() {
            let t = t + 1;
            a.set_meta(format!("lambda_{t}"), format!("{:?}", cfg.train.lambdas[t - 1]));
            a.set_meta(format!("sigma_{t}"), format!("{:?}", enc.kernel.sigma()));
            a.set_meta(format!("k_{t}"), enc.kernel.k());
        }
        a
    }

    pub fn from_archive(a: &ModelArchive) -> Result<Self> {
        a.validate()?;
        let modalities: usize = a.meta_parsed("modalities")?;
        let bits: usize = a.meta_parsed("r")?;
        let mut lambdas = Vec::new();
        let mut anchors = Vec::new();
        let mut encs = Vec::new();
        let mut p = Vec::new();
        for t in 1..=modalities {
            lambdas.push(a.meta_parsed(&format!("lambda_{t}"))?);
            let k: usize = a.meta_parsed(&format!("k_{t}"))?;
            anchors.push(k);
            let center = a.matrix(&format!("kcenter_{t}"))?;
            let kernel = KernelMap::new(
                a.matrix(&format!("anchors_{t}"))?.clone(),
                a.meta_parsed(&format!("sigma_{t}"))?,
                DVector::from_column_slice(center.as_slice()),
            )
            .map_err(|e| Error::Format(format!("modality {t} kernel: {e}")))?;
            if kernel.k() != k {
                return Err(Error::Format(format!(
                    "modality {t}: metadata k={k} but {} anchors stored",
                    kernel.k()
                )));
            }
            let p_h = a.matrix(&format!("Ph_{t}"))?.clone();
            if p_h.shape() != (k, bits) {
                return Err(Error::Format(format!(
                    "Ph_{t} is {:?}, expected ({k}, {bits})",
                    p_h.shape()
                )));
            }
            encs.push(ModalityEncoder { kernel, p_h });
            p.push(a.matrix(&format!("P_{t}"))?.clone());
        }
        let config = PipelineConfig {
            train: TrainConfig {
                bits,
                omega: a.meta_parsed("omega")?,
                lambdas,
                max_iters: a.meta_parsed("max_iters").unwrap_or(30),
                rel_tol: a.meta_parsed("rel_tol").unwrap_or(1e-5),
                seed: a.meta_parsed("seed")?,
            },
            anchors,
            lambda_h: a.meta_parsed("lambda_h")?,
            width_sample_cap: a.meta_parsed("width_sample_cap").unwrap_or(DEFAULT_WIDTH_SAMPLE_CAP),
        };
        let encoder = HashEncoder::new(encs, config.lambda_h).map_err(|e| Error::Format(e.to_string()))?;
        let state = ModelState {
            v: a.matrix("V")?.clone(),
            rot: a.matrix("R")?.clone(),
            m: a.matrix("M")?.clone(),
            b: a.matrix("B")?.clone(),
            p,
        };
        let report = TrainReport {
            objective_history: parse_reals(a.meta("objective_history")?)?,
            iterations_run: a.meta_parsed("iterations")?,
            converged: a.meta_parsed("converged").unwrap_or(false),
            wall_time_seconds: 0.0,
        };
        Ok(TrainedModel {
            config,
            state,
            encoder,
            report,
        })
    }
}

/// Scores of one retrieval direction.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskScores {
    pub map: retrieval::MapReport,
    pub topn: Vec<(usize, f64)>,
}

impl TaskScores {
    pub fn rows(&self, task: &str, bits: usize) -> Vec<MetricRow> {
        let mut rows = vec![MetricRow {
            metric: "map".into(),
            task: task.into(),
            bits,
            value: self.map.map,
        }];
        rows.extend(self.topn.iter().map(|&(n, p)| MetricRow {
            metric: format!("p@{n}"),
            task: task.into(),
            bits,
            value: p,
        }));
        rows
    }
}

/// mAP (and optionally top-N precision) of `queries` against `db`.
pub fn score(
    queries: &CodeSet,
    db: &CodeSet,
    query_labels: &RawLabelMatrix,
    db_labels: &RawLabelMatrix,
    cutoff: Option<usize>,
    topn: &[usize],
    include_empty: bool,
) -> Result<TaskScores> {
    let judge = RelevanceJudge::new(query_labels, db_labels)?;
    let map = retrieval::mean_average_precision(queries, db, &judge, cutoff, include_empty)?;
    let topn = if topn.is_empty() {
        Vec::new()
    } else {
        retrieval::topn_precision_curve(queries, db, &judge, topn)?
    };
    Ok(TaskScores { map, topn })
}

/// Image-to-text and text-to-image scores with out-of-sample codes on both
/// sides: queries are encoded from the query split, the database from the
/// training split of the other modality.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossModalScores {
    pub i2t: TaskScores,
    pub t2i: TaskScores,
}

pub fn evaluate_cross_modal(
    model: &TrainedModel,
    query: [&DMatrix<f64>; 2],
    query_labels: &RawLabelMatrix,
    db: [&DMatrix<f64>; 2],
    db_labels: &RawLabelMatrix,
    topn: &[usize],
) -> Result<CrossModalScores> {
    let q_img = model.encode(query[0], 1)?;
    let q_txt = model.encode(query[1], 2)?;
    let db_img = model.encode(db[0], 1)?;
    let db_txt = model.encode(db[1], 2)?;
    Ok(CrossModalScores {
        i2t: score(&q_img, &db_txt, query_labels, db_labels, None, topn, false)?,
        t2i: score(&q_txt, &db_img, query_labels, db_labels, None, topn, false)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::generate_synthetic;

    #[test]
    fn archive_round_trip_reproduces_model() {
        let data = generate_synthetic(120, 3, 6, 4, 0.2, 2).unwrap();
        let cfg = PipelineConfig {
            train: TrainConfig {
                bits: 8,
                max_iters: 4,
                ..TrainConfig::default()
            },
            anchors: vec![20, 30],
            ..PipelineConfig::default()
        };
        let model = fit(&[data.x1.values(), data.x2.values()], &data.labels, &cfg).unwrap();
        let archive = model.to_archive();
        let bytes = archive.to_bytes().unwrap();
        let back = TrainedModel::from_archive(&ModelArchive::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back.state, model.state);
        assert_eq!(back.encoder, model.encoder);
        assert_eq!(back.config, model.config);
        assert_eq!(back.report.objective_history, model.report.objective_history);
        assert_eq!(back.to_archive().to_bytes().unwrap(), bytes);
    }

    #[test]
    fn mismatched_rows_rejected_before_training() {
        let data = generate_synthetic(50, 2, 3, 3, 0.1, 0).unwrap();
        let short = data.x2.values().rows(0, 40).into_owned();
        let err = fit(&[data.x1.values(), &short], &data.labels, &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }
}
