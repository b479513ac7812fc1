//! In-browser playground. A [`Session`] trains on a synthetic two-modality
//! set and answers three kinds of request: the training summary, top-N
//! precision curves and single-query Hamming rankings. Every answer is a
//! JSON string.

use ascmh::dataio::{generate_synthetic, RawLabelMatrix};
use ascmh::pipeline::{self, fit, PipelineConfig, TrainedModel};
use ascmh::retrieval::{self, CodeSet, RelevanceJudge};
use ascmh::trainer::TrainConfig;
use nalgebra::DMatrix;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Knobs exposed on the page.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub n_train: usize,
    pub n_query: usize,
    pub classes: usize,
    pub noise: f64,
    pub bits: usize,
    pub omega: f64,
    pub lambda: f64,
    pub anchors: usize,
    pub sweeps: usize,
    pub seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            n_train: 600,
            n_query: 100,
            classes: 5,
            noise: 0.3,
            bits: 32,
            omega: 0.5,
            lambda: 0.5,
            anchors: 200,
            sweeps: 15,
            seed: 7,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub objective: Vec<f64>,
    pub converged: bool,
    pub map_i2t: f64,
    pub map_t2i: f64,
    pub random_i2t: f64,
    pub random_t2i: f64,
    pub rotation_error: f64,
    pub latent_error: f64,
}

#[derive(Debug, Serialize)]
pub struct Curves {
    pub points: Vec<usize>,
    pub i2t: Vec<f64>,
    pub t2i: Vec<f64>,
    pub random: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct Hit {
    pub index: usize,
    pub distance: u32,
    pub class: usize,
    pub relevant: bool,
}

#[derive(Debug, Serialize)]
pub struct Ranking {
    pub query: usize,
    pub query_class: usize,
    pub modality: usize,
    pub hits: Vec<Hit>,
    pub precision: f64,
}

fn rows(m: &DMatrix<f64>, lo: usize, len: usize) -> DMatrix<f64> {
    m.rows(lo, len).into_owned()
}

fn class_of(labels: &RawLabelMatrix, i: usize) -> usize {
    labels.values().column(i).iter().position(|&v| v > 0.0).unwrap_or(0)
}

/// A trained model with its encoded query and database sides.
pub struct Playground {
    pub settings: Settings,
    pub model: TrainedModel,
    query_labels: RawLabelMatrix,
    db_labels: RawLabelMatrix,
    /// Query codes per modality, image then text.
    queries: [CodeSet; 2],
    /// Database codes per modality.
    db: [CodeSet; 2],
}

impl Playground {
    pub fn train(settings: Settings) -> ascmh::Result<Self> {
        let s = &settings;
        let n = s.n_train + s.n_query;
        let data = generate_synthetic(n, s.classes, 32, 16, s.noise, s.seed)?;
        let train_idx: Vec<usize> = (0..s.n_train).collect();
        let query_idx: Vec<usize> = (s.n_train..n).collect();
        let train = [rows(data.x1.values(), 0, s.n_train), rows(data.x2.values(), 0, s.n_train)];
        let query = [
            rows(data.x1.values(), s.n_train, s.n_query),
            rows(data.x2.values(), s.n_train, s.n_query),
        ];
        let cfg = PipelineConfig {
            train: TrainConfig {
                bits: s.bits,
                omega: s.omega,
                lambdas: vec![s.lambda, s.lambda],
                max_iters: s.sweeps,
                seed: s.seed,
                ..TrainConfig::default()
            },
            anchors: vec![s.anchors.min(s.n_train); 2],
            ..PipelineConfig::default()
        };
        let model = fit(&[&train[0], &train[1]], &data.labels.select(&train_idx), &cfg)?;
        let queries = [model.encode(&query[0], 1)?, model.encode(&query[1], 2)?];
        let db = [model.encode(&train[0], 1)?, model.encode(&train[1], 2)?];
        Ok(Playground {
            settings,
            model,
            query_labels: data.labels.select(&query_idx),
            db_labels: data.labels.select(&train_idx),
            queries,
            db,
        })
    }

    fn judge(&self) -> ascmh::Result<RelevanceJudge> {
        RelevanceJudge::new(&self.query_labels, &self.db_labels)
    }

    fn random_codes(&self) -> (CodeSet, CodeSet) {
        let s = &self.settings;
        (
            CodeSet::random(s.n_query, s.bits, s.seed ^ 0x5eed),
            CodeSet::random(s.n_train, s.bits, s.seed ^ 0xdb),
        )
    }

    pub fn summary(&self) -> ascmh::Result<Summary> {
        let judge = self.judge()?;
        let map = |q: &CodeSet, d: &CodeSet| {
            retrieval::mean_average_precision(q, d, &judge, None, false).map(|r| r.map)
        };
        let (rq, rd) = self.random_codes();
        let (rq2, rd2) = {
            let s = &self.settings;
            (
                CodeSet::random(s.n_query, s.bits, s.seed ^ 0x7e47),
                CodeSet::random(s.n_train, s.bits, s.seed ^ 0x1a6e),
            )
        };
        let c = self.model.state.constraints();
        Ok(Summary {
            objective: self.model.report.objective_history.clone(),
            converged: self.model.report.converged,
            map_i2t: map(&self.queries[0], &self.db[1])?,
            map_t2i: map(&self.queries[1], &self.db[0])?,
            random_i2t: map(&rq, &rd)?,
            random_t2i: map(&rq2, &rd2)?,
            rotation_error: c.rotation,
            latent_error: c.latent_gram,
        })
    }

    pub fn curves(&self, steps: usize) -> ascmh::Result<Curves> {
        let judge = self.judge()?;
        let n = self.settings.n_train;
        let steps = steps.clamp(1, n);
        let mut points: Vec<usize> = (1..=steps).map(|i| (i * n / steps).max(1)).collect();
        points.dedup();
        let curve = |q: &CodeSet, d: &CodeSet| -> ascmh::Result<Vec<f64>> {
            Ok(retrieval::topn_precision_curve(q, d, &judge, &points)?
                .into_iter()
                .map(|(_, p)| p)
                .collect())
        };
        let (rq, rd) = self.random_codes();
        Ok(Curves {
            i2t: curve(&self.queries[0], &self.db[1])?,
            t2i: curve(&self.queries[1], &self.db[0])?,
            random: curve(&rq, &rd)?,
            points,
        })
    }

    /// Rank the text database for an image query (`modality = 1`) or the
    /// image database for a text query (`modality = 2`).
    pub fn rank(&self, query: usize, modality: usize, top: usize) -> ascmh::Result<Ranking> {
        if !(1..=2).contains(&modality) || query >= self.settings.n_query {
            return Err(ascmh::Error::Validation(format!(
                "query {query} / modality {modality} out of range (queries 0..{}, modality 1 or 2)",
                self.settings.n_query
            )));
        }
        let q = &self.queries[modality - 1];
        let db = &self.db[2 - modality];
        let judge = self.judge()?;
        let ranked = retrieval::rank_by_hamming(q.code(query), db)?;
        let hits: Vec<Hit> = ranked
            .iter()
            .take(top)
            .map(|&j| {
                Ok(Hit {
                    index: j,
                    distance: q.hamming(query, db, j)?,
                    class: class_of(&self.db_labels, j),
                    relevant: judge.relevant(query, j),
                })
            })
            .collect::<ascmh::Result<_>>()?;
        let precision = if hits.is_empty() {
            0.0
        } else {
            hits.iter().filter(|h| h.relevant).count() as f64 / hits.len() as f64
        };
        Ok(Ranking {
            query,
            query_class: class_of(&self.query_labels, query),
            modality,
            hits,
            precision,
        })
    }

    /// Score a held-out set with the library's evaluation path.
    pub fn heldout_scores(&self) -> ascmh::Result<(f64, f64)> {
        let i2t = pipeline::score(&self.queries[0], &self.db[1], &self.query_labels, &self.db_labels, None, &[], false)?;
        let t2i = pipeline::score(&self.queries[1], &self.db[0], &self.query_labels, &self.db_labels, None, &[], false)?;
        Ok((i2t.map.map, t2i.map.map))
    }
}

fn to_js<T: Serialize>(value: ascmh::Result<T>) -> Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub struct Session {
    inner: Playground,
}

#[wasm_bindgen]
impl Session {
    /// Generate data and train. All arguments come straight from the page.
    #[wasm_bindgen(constructor)]
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_train: usize,
        classes: usize,
        noise: f64,
        bits: usize,
        omega: f64,
        lambda: f64,
        sweeps: usize,
        seed: u32,
    ) -> Result<Session, JsError> {
        let settings = Settings {
            n_train,
            n_query: (n_train / 6).max(10),
            classes,
            noise,
            bits,
            omega,
            lambda,
            sweeps,
            seed: seed as u64,
            ..Settings::default()
        };
        Playground::train(settings)
            .map(|inner| Session { inner })
            .map_err(|e| JsError::new(&e.to_string()))
    }

    pub fn summary(&self) -> Result<String, JsError> {
        to_js(self.inner.summary())
    }

    pub fn curves(&self, steps: usize) -> Result<String, JsError> {
        to_js(self.inner.curves(steps))
    }

    pub fn rank(&self, query: usize, modality: usize, top: usize) -> Result<String, JsError> {
        to_js(self.inner.rank(query, modality, top))
    }

    #[wasm_bindgen(getter)]
    pub fn queries(&self) -> usize {
        self.inner.settings.n_query
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Playground {
        Playground::train(Settings {
            n_train: 240,
            n_query: 40,
            classes: 4,
            bits: 16,
            anchors: 60,
            sweeps: 6,
            ..Settings::default()
        })
        .unwrap()
    }

    #[test]
    fn summary_beats_random_codes() {
        let p = small();
        let s = p.summary().unwrap();
        assert_eq!(s.objective.len(), p.model.report.iterations_run);
        assert!(s.map_i2t > s.random_i2t + 0.3, "{s:?}");
        assert!(s.map_t2i > s.random_t2i + 0.3, "{s:?}");
        assert_eq!(p.heldout_scores().unwrap(), (s.map_i2t, s.map_t2i));
        let json = serde_json::to_value(&s).unwrap();
        assert!(json["objective"].is_array());
    }

    #[test]
    fn curves_cover_the_database() {
        let c = small().curves(12).unwrap();
        assert_eq!(c.points.last(), Some(&240));
        assert_eq!(c.i2t.len(), c.points.len());
        // at N = whole database every code set scores the base rate
        let last = c.points.len() - 1;
        assert!((c.i2t[last] - c.random[last]).abs() < 1e-12);
    }

    #[test]
    fn ranking_is_sorted_and_checked() {
        let p = small();
        let r = p.rank(3, 2, 25).unwrap();
        assert_eq!(r.hits.len(), 25);
        assert!(r.hits.windows(2).all(|w| w[0].distance <= w[1].distance));
        assert!(r.hits.iter().all(|h| h.relevant == (h.class == r.query_class)));
        assert!(p.rank(40, 1, 5).is_err());
        assert!(p.rank(0, 3, 5).is_err());
    }
}
