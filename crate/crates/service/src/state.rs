use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, Sender};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use voxkit_core::infer::{sliding_window_infer_with_progress, PredictorSpec, SlidingWindowConfig};
use voxkit_core::preprocess::Normalization;
use voxkit_core::{orientation_of, ElementType, Volume};

use crate::error::ApiError;
use crate::ServiceConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub size: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub orientation: Option<String>,
    pub element_type: ElementType,
    pub filename: Option<String>,
    /// Intensity range, used as the default display window.
    pub min: f64,
    pub max: f64,
}

impl VolumeMeta {
    pub fn of(v: &Volume, filename: Option<String>) -> Self {
        let g = v.geometry();
        let (min, max) = v.data().min_max().unwrap_or((0.0, 0.0));
        VolumeMeta {
            size: g.size,
            spacing: g.spacing,
            origin: g.origin,
            orientation: orientation_of(&g.direction).ok().map(|c| c.to_string()),
            element_type: v.element_type(),
            filename,
            min,
            max,
        }
    }
}

/// Body of `POST /volumes/{id}/segment`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub predictor: String,
    pub patch_size: [usize; 3],
    pub stride: [usize; 3],
    #[serde(default)]
    pub lo: Option<f32>,
    #[serde(default)]
    pub hi: Option<f32>,
    /// Model path on the server host.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub io_spec: Option<serde_json::Value>,
    #[serde(default)]
    pub normalization: Option<Normalization>,
}

impl SegmentRequest {
    pub fn predictor_spec(&self) -> Result<PredictorSpec, ApiError> {
        let missing = |f: &str| ApiError::bad_request("InvalidRequest", format!("{} predictor needs {f:?}", self.predictor));
        match self.predictor.as_str() {
            "threshold" => Ok(PredictorSpec::Threshold {
                lo: self.lo.ok_or_else(|| missing("lo"))?,
                hi: self.hi.ok_or_else(|| missing("hi"))?,
            }),
            #[cfg(feature = "onnx")]
            "onnx" => {
                let model = self.model.clone().ok_or_else(|| missing("model"))?;
                let raw = self.io_spec.clone().ok_or_else(|| missing("io_spec"))?;
                let io_spec = serde_json::from_value(raw)
                    .map_err(|e| ApiError::bad_request("InvalidRequest", format!("io_spec: {e}")))?;
                Ok(PredictorSpec::Onnx { model, io_spec })
            }
            other => Err(ApiError::bad_request(
                "UnknownPredictor",
                format!("unknown predictor {other:?}, available: {}", PredictorSpec::available().join(", ")),
            )),
        }
    }

    pub fn window_config(&self) -> Result<SlidingWindowConfig, ApiError> {
        let mut cfg = SlidingWindowConfig::new(self.patch_size, self.stride);
        if let Some(n) = self.normalization {
            cfg.normalization = n;
        }
        cfg.validate()
            .map_err(|e| ApiError::bad_request("InvalidRequest", e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationJob {
    pub id: String,
    pub volume_id: String,
    pub request: SegmentRequest,
    pub state: JobState,
    /// Fraction of windows accumulated, 0 to 1.
    pub progress: f64,
    pub mask_id: Option<String>,
    pub error: Option<String>,
}

pub(crate) struct StoredVolume {
    pub meta: VolumeMeta,
    pub volume: Volume,
}

struct Queued {
    job_id: String,
    volume: Arc<StoredVolume>,
    spec: PredictorSpec,
    cfg: SlidingWindowConfig,
}

#[derive(Default)]
struct Store {
    volumes: RwLock<HashMap<String, Arc<StoredVolume>>>,
    masks: RwLock<HashMap<String, Arc<Volume>>>,
    jobs: RwLock<HashMap<String, SegmentationJob>>,
    next_id: AtomicU64,
    spool_dir: Option<PathBuf>,
}

impl Store {
    fn update_job(&self, id: &str, f: impl FnOnce(&mut SegmentationJob)) {
        if let Some(job) = self.jobs.write().unwrap().get_mut(id) {
            f(job);
        }
    }

    fn spool(&self, name: &str, v: &Volume) {
        if let Some(dir) = &self.spool_dir {
            if let Err(e) = voxkit_core::write_volume(v, dir.join(name), voxkit_core::WriteOptions { compress: true }) {
                log::warn!("spooling {name}: {e}");
            }
        }
    }

    fn run(&self, q: Queued) {
        self.update_job(&q.job_id, |j| j.state = JobState::Running);
        let outcome = q.spec.build(q.cfg.patch_size).and_then(|p| {
            sliding_window_infer_with_progress(&q.volume.volume, p.as_ref(), &q.cfg, &mut |done, total| {
                self.update_job(&q.job_id, |j| j.progress = done as f64 / total.max(1) as f64)
            })
        });
        match outcome {
            Ok(result) => {
                let mask_id = format!("m{}", self.next_id.fetch_add(1, Ordering::Relaxed));
                self.spool(&format!("{mask_id}.mha"), &result.labels);
                self.masks.write().unwrap().insert(mask_id.clone(), Arc::new(result.labels));
                self.update_job(&q.job_id, |j| {
                    j.state = JobState::Done;
                    j.progress = 1.0;
                    j.mask_id = Some(mask_id);
                });
            }
            Err(e) => {
                log::warn!("job {} failed: {e}", q.job_id);
                self.update_job(&q.job_id, |j| {
                    j.state = JobState::Failed;
                    j.error = Some(e.to_string());
                });
            }
        }
    }
}

/// Shared handler state. Cloning is cheap; the job worker exits once every
/// clone is dropped.
#[derive(Clone)]
pub struct AppState {
    store: Arc<Store>,
    queue: Arc<Mutex<Sender<Queued>>>,
    max_upload_bytes: usize,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        let store = Arc::new(Store {
            spool_dir: config.spool_dir,
            ..Store::default()
        });
        let (tx, rx) = channel::<Queued>();
        let worker = Arc::clone(&store);
        std::thread::Builder::new()
            .name("segment-worker".into())
            .spawn(move || {
                for q in rx {
                    worker.run(q);
                }
            })
            .expect("spawn job worker");
        AppState {
            store,
            queue: Arc::new(Mutex::new(tx)),
            max_upload_bytes: config.max_upload_bytes,
        }
    }

    pub fn max_upload_bytes(&self) -> usize {
        self.max_upload_bytes
    }

    fn fresh_id(&self, prefix: char) -> String {
        format!("{prefix}{}", self.store.next_id.fetch_add(1, Ordering::Relaxed))
    }

    pub fn insert_volume(&self, volume: Volume, filename: Option<String>) -> (String, VolumeMeta) {
        let id = self.fresh_id('v');
        let meta = VolumeMeta::of(&volume, filename);
        self.store.spool(&format!("{id}.mha"), &volume);
        let stored = Arc::new(StoredVolume { meta: meta.clone(), volume });
        self.store.volumes.write().unwrap().insert(id.clone(), stored);
        (id, meta)
    }

    pub(crate) fn volume(&self, id: &str) -> Result<Arc<StoredVolume>, ApiError> {
        self.store.volumes.read().unwrap().get(id).cloned().ok_or_else(|| ApiError::not_found("volume", id))
    }

    pub fn mask(&self, id: &str) -> Result<Arc<Volume>, ApiError> {
        self.store.masks.read().unwrap().get(id).cloned().ok_or_else(|| ApiError::not_found("mask", id))
    }

    pub fn job(&self, id: &str) -> Result<SegmentationJob, ApiError> {
        self.store.jobs.read().unwrap().get(id).cloned().ok_or_else(|| ApiError::not_found("job", id))
    }

    /// Validates `request` and queues a job on volume `volume_id`.
    pub fn submit(&self, volume_id: &str, request: SegmentRequest) -> Result<SegmentationJob, ApiError> {
        let volume = self.volume(volume_id)?;
        let spec = request.predictor_spec()?;
        let cfg = request.window_config()?;
        let job = SegmentationJob {
            id: self.fresh_id('j'),
            volume_id: volume_id.to_string(),
            request,
            state: JobState::Queued,
            progress: 0.0,
            mask_id: None,
            error: None,
        };
        self.store.jobs.write().unwrap().insert(job.id.clone(), job.clone());
        let queued = Queued {
            job_id: job.id.clone(),
            volume,
            spec,
            cfg,
        };
        self.queue
            .lock()
            .unwrap()
            .send(queued)
            .map_err(|_| ApiError::internal("job worker has stopped"))?;
        Ok(job)
    }
}
