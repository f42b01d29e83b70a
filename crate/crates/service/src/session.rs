use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cfshap_core::{Classifier, Family, Pipeline};

use crate::error::ApiError;

pub struct Session {
    pub id: String,
    pub dataset: String,
    pub family: Family,
    pub seed: Option<u64>,
    pub pipeline: Arc<Pipeline>,
    pub created_at: SystemTime,
    pub row: usize,
    pub predicted: usize,
    pub probabilities: Vec<f64>,
    rng: ChaCha8Rng,
    last_used: Instant,
}

impl Session {
    pub fn new(id: String, dataset: String, family: Family, seed: Option<u64>, pipeline: Arc<Pipeline>) -> Result<Self, ApiError> {
        let rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or_else(rand::random));
        let mut s = Self {
            id,
            dataset,
            family,
            seed,
            pipeline,
            created_at: SystemTime::now(),
            row: 0,
            predicted: 0,
            probabilities: Vec::new(),
            rng,
            last_used: Instant::now(),
        };
        s.resample()?;
        Ok(s)
    }

    /// Draws a new point from the test split and predicts it.
    pub fn resample(&mut self) -> Result<(), ApiError> {
        let test = &self.pipeline.split().test_indices;
        let row = test[self.rng.gen_range(0..test.len())];
        let point = self.pipeline.data().row(row);
        self.probabilities = self.pipeline.model().predict_proba(point)?;
        self.predicted = self.pipeline.model().predict(point)?;
        self.row = row;
        Ok(())
    }

    /// Standardized coordinates of the current point.
    pub fn point(&self) -> &[f64] {
        self.pipeline.data().row(self.row)
    }
}

pub struct SessionStore {
    sessions: Mutex<HashMap<String, Session>>,
    ttl: Duration,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        Self {
            sessions: Mutex::new(HashMap::new()),
            ttl,
        }
    }

    pub fn insert(&self, session: Session) {
        let mut map = self.sessions.lock().expect("session lock");
        map.insert(session.id.clone(), session);
    }

    /// Runs `f` on a live session, refreshing its idle timer. Expired
    /// sessions are dropped first.
    pub fn with<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let mut map = self.sessions.lock().expect("session lock");
        let now = Instant::now();
        map.retain(|_, s| now.duration_since(s.last_used) < self.ttl);
        let session = map.get_mut(id).ok_or_else(|| ApiError::session_not_found(id))?;
        session.last_used = now;
        f(session)
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("session lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn new_session_id() -> String {
    hex::encode(rand::random::<[u8; 16]>())
}
