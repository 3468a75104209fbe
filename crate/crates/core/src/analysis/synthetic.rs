use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::error::{Error, Result};
use crate::event::{Event, EventStream};

/// Bipartite user-item stream with planted, periodically rotating
/// user-item affinities.
///
/// Users and items are split into `communities` groups. Events come from
/// `concurrent` interleaved sessions; a session belongs to one user, lasts
/// `session_length` events on average and targets one community, which
/// rotates from one session of a user to the next. Inside a session, items
/// follow the community with probability `affinity` and are uniform
/// otherwise. Edge features are a noisy one-hot of the session community.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub events: usize,
    pub communities: usize,
    pub concurrent: usize,
    pub session_length: f64,
    pub affinity: f64,
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            users: 100,
            items: 100,
            events: 2000,
            communities: 4,
            concurrent: 8,
            session_length: 12.0,
            affinity: 0.9,
            feature_noise: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.items == 0 || self.events == 0 || self.concurrent == 0 {
            return Err(Error::arg(
                "synthetic stream needs users, items, events and sessions",
            ));
        }
        if self.communities == 0 || self.communities > self.items {
            return Err(Error::arg(format!(
                "cannot form {} communities",
                self.communities
            )));
        }
        if !(0.0..=1.0).contains(&self.affinity) {
            return Err(Error::arg(format!(
                "affinity must lie in [0,1], got {}",
                self.affinity
            )));
        }
        if !(self.session_length >= 1.0 && self.feature_noise >= 0.0) {
            return Err(Error::arg(
                "session length must be at least 1 and feature noise non-negative",
            ));
        }
        Ok(())
    }
}

const SYNTH_TAG: u64 = 0x7379_6e74;

struct Session {
    user: usize,
    community: usize,
}

/// Users take ids `0..users`, items `users..users + items`.
pub fn synthetic_stream(cfg: &SyntheticConfig) -> Result<EventStream> {
    cfg.validate()?;
    let mut rng = crate::seed::rng(cfg.seed, &[SYNTH_TAG]);
    let c = cfg.communities;
    let group_items: Vec<Vec<usize>> = (0..c)
        .map(|g| (0..cfg.items).filter(|i| i % c == g).collect())
        .collect();
    let mut visits = vec![0usize; cfg.users];
    let mut open = |rng: &mut rand_chacha::ChaCha8Rng| {
        let user = rng.random_range(0..cfg.users);
        visits[user] += 1;
        Session {
            user,
            community: (user + visits[user]) % c,
        }
    };
    let mut sessions: Vec<Session> = (0..cfg.concurrent).map(|_| open(&mut rng)).collect();
    let gaps = Exp::new(1.0).map_err(|e| Error::arg(e.to_string()))?;
    let noise = Normal::new(0.0, cfg.feature_noise).map_err(|e| Error::arg(e.to_string()))?;
    let end = 1.0 / cfg.session_length;
    let mut t = 0.0;
    let mut events = Vec::with_capacity(cfg.events);
    for _ in 0..cfg.events {
        t += gaps.sample(&mut rng);
        let k = rng.random_range(0..sessions.len());
        let Session { user, community } = sessions[k];
        let item = if rng.random_bool(cfg.affinity) {
            let pool = &group_items[community];
            pool[rng.random_range(0..pool.len())]
        } else {
            rng.random_range(0..cfg.items)
        };
        let features: Vec<f64> = (0..c)
            .map(|g| f64::from(u8::from(g == community)) + noise.sample(&mut rng))
            .collect();
        events.push(Event::positive(user, cfg.users + item, t, features));
        if rng.random_bool(end) {
            sessions[k] = open(&mut rng);
        }
    }
    EventStream::new(events, cfg.users + cfg.items, c)
}
