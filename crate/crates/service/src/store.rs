use loopforge_model::{DecodeSession, Model};
use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

pub const DEFAULT_SESSION_CAP: usize = 64;

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

pub struct LoadedModel {
    pub model: Arc<Model>,
    pub checkpoint_path: String,
}

pub struct SessionEntry {
    pub id: String,
    pub model_id: String,
    pub session: DecodeSession,
    pub created_ms: u64,
    pub updated_ms: u64,
}

pub type SharedSession = Arc<Mutex<SessionEntry>>;

/// Sessions keyed by id, evicting the least recently used past `cap`.
struct Sessions {
    map: HashMap<String, SharedSession>,
    recency: VecDeque<String>,
    cap: usize,
}

impl Sessions {
    fn touch(&mut self, id: &str) {
        if let Some(pos) = self.recency.iter().position(|s| s == id) {
            let id = self.recency.remove(pos).expect("position is valid");
            self.recency.push_back(id);
        }
    }
}

/// In-memory registry of loaded models and live sessions. Nothing persists
/// across restarts.
pub struct Store {
    models: RwLock<HashMap<String, Arc<LoadedModel>>>,
    sessions: Mutex<Sessions>,
    next_id: AtomicU64,
}

impl Store {
    pub fn new(session_cap: usize) -> Self {
        Self {
            models: RwLock::new(HashMap::new()),
            sessions: Mutex::new(Sessions {
                map: HashMap::new(),
                recency: VecDeque::new(),
                cap: session_cap.max(1),
            }),
            next_id: AtomicU64::new(1),
        }
    }

    fn fresh_id(&self, prefix: &str) -> String {
        format!("{prefix}{}", self.next_id.fetch_add(1, Ordering::Relaxed))
    }

    pub fn add_model(&self, model: LoadedModel) -> String {
        let id = self.fresh_id("m");
        self.models
            .write()
            .expect("model lock")
            .insert(id.clone(), Arc::new(model));
        id
    }

    pub fn model(&self, id: &str) -> Option<Arc<LoadedModel>> {
        self.models.read().expect("model lock").get(id).cloned()
    }

    pub fn model_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.models.read().expect("model lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn add_session(&self, model_id: &str, session: DecodeSession) -> SharedSession {
        let id = self.fresh_id("s");
        let now = now_ms();
        let entry = Arc::new(Mutex::new(SessionEntry {
            id: id.clone(),
            model_id: model_id.to_string(),
            session,
            created_ms: now,
            updated_ms: now,
        }));
        let mut s = self.sessions.lock().expect("session lock");
        s.map.insert(id.clone(), Arc::clone(&entry));
        s.recency.push_back(id);
        while s.map.len() > s.cap {
            if let Some(old) = s.recency.pop_front() {
                s.map.remove(&old);
            }
        }
        entry
    }

    pub fn session(&self, id: &str) -> Option<SharedSession> {
        let mut s = self.sessions.lock().expect("session lock");
        let found = s.map.get(id).cloned();
        if found.is_some() {
            s.touch(id);
        }
        found
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session lock").map.len()
    }
}
