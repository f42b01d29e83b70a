//! Fitted pipelines shared across sessions, trained once per key.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::sync::watch;

use cfshap_core::{Dataset, Family, Pipeline, PipelineConfig};

use crate::error::ApiError;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub dataset: String,
    pub family: Family,
    /// Serialized pipeline configuration, seed included.
    pub config: String,
}

impl CacheKey {
    pub fn new(dataset: &str, family: Family, config: &PipelineConfig) -> Self {
        Self {
            dataset: dataset.to_string(),
            family,
            config: serde_json::to_string(config).expect("config serializes"),
        }
    }
}

type Outcome = Option<Result<Arc<Pipeline>, ApiError>>;

enum Slot {
    Training(watch::Receiver<Outcome>),
    Ready(Arc<Pipeline>),
}

#[derive(Default)]
pub struct ModelCache {
    slots: Mutex<HashMap<CacheKey, Slot>>,
    fits: AtomicUsize,
}

impl ModelCache {
    /// Number of pipelines trained so far.
    pub fn fits(&self) -> usize {
        self.fits.load(Ordering::SeqCst)
    }

    /// Returns the pipeline for `key`, training it on the blocking pool if
    /// needed. Concurrent callers wait on the same training run; after
    /// `wait` they get a 503 and the training carries on.
    pub async fn get(
        self: &Arc<Self>,
        key: CacheKey,
        dataset: Arc<Dataset>,
        config: PipelineConfig,
        wait: Duration,
    ) -> Result<Arc<Pipeline>, ApiError> {
        let mut rx = {
            let mut slots = self.slots.lock().expect("cache lock");
            match slots.get(&key) {
                Some(Slot::Ready(p)) => return Ok(p.clone()),
                Some(Slot::Training(rx)) => rx.clone(),
                None => {
                    let (tx, rx) = watch::channel(None);
                    slots.insert(key.clone(), Slot::Training(rx.clone()));
                    self.spawn_training(key, dataset, config, tx);
                    rx
                }
            }
        };
        let waited = tokio::time::timeout(wait, async {
            rx.wait_for(Option::is_some).await.map(|o| o.clone())
        })
        .await;
        match waited {
            Ok(Ok(outcome)) => outcome.expect("checked by wait_for"),
            Ok(Err(_)) => Err(ApiError::internal("training task ended without a result")),
            Err(_) => Err(ApiError::training(wait.as_secs().max(1))),
        }
    }

    fn spawn_training(
        self: &Arc<Self>,
        key: CacheKey,
        dataset: Arc<Dataset>,
        config: PipelineConfig,
        tx: watch::Sender<Outcome>,
    ) {
        let cache = Arc::clone(self);
        tokio::spawn(async move {
            let family = key.family;
            log::info!("training {} on {}", family, key.dataset);
            let built = tokio::task::spawn_blocking(move || Pipeline::build((*dataset).clone(), family, config)).await;
            cache.fits.fetch_add(1, Ordering::SeqCst);
            let outcome = match built {
                Ok(Ok(p)) => Ok(Arc::new(p)),
                Ok(Err(e)) => Err(ApiError::from(e)),
                Err(e) => Err(ApiError::internal(format!("training panicked: {e}"))),
            };
            {
                let mut slots = cache.slots.lock().expect("cache lock");
                match &outcome {
                    Ok(p) => {
                        slots.insert(key, Slot::Ready(p.clone()));
                    }
                    // failed keys are retried on the next request
                    Err(_) => {
                        slots.remove(&key);
                    }
                }
            }
            let _ = tx.send(Some(outcome));
        });
    }
}
