use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Polarity};

/// A contiguous chronological slice of a stream plus its sampled negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalBatch {
    index: usize,
    start: usize,
    positives: Vec<Event>,
    negatives: Vec<Event>,
    negative_origin: Vec<usize>,
    interval: (f64, f64),
}

impl TemporalBatch {
    /// `start` is the stream offset of the first positive.
    pub fn new(index: usize, start: usize, positives: Vec<Event>) -> Result<Self> {
        for (k, e) in positives.iter().enumerate() {
            if e.polarity != Polarity::Positive {
                return Err(Error::arg(format!("batch event {k} is not positive")));
            }
            if k > 0 && positives[k - 1].timestamp > e.timestamp {
                return Err(Error::arg(format!("batch event {k} is out of order")));
            }
        }
        let interval = match (positives.first(), positives.last()) {
            (Some(a), Some(b)) => (a.timestamp, b.timestamp),
            _ => (0.0, 0.0),
        };
        Ok(Self {
            index,
            start,
            positives,
            negatives: Vec::new(),
            negative_origin: Vec::new(),
            interval,
        })
    }

    /// A batch with no events, used as the predecessor of the first batch.
    pub fn empty() -> Self {
        Self {
            index: 0,
            start: 0,
            positives: Vec::new(),
            negatives: Vec::new(),
            negative_origin: Vec::new(),
            interval: (0.0, 0.0),
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn positives(&self) -> &[Event] {
        &self.positives
    }

    pub fn negatives(&self) -> &[Event] {
        &self.negatives
    }

    /// For each negative, the index of the positive it was derived from.
    pub fn negative_origin(&self) -> &[usize] {
        &self.negative_origin
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub(crate) fn with_negatives(&self, negatives: Vec<Event>, origin: Vec<usize>) -> Self {
        debug_assert_eq!(negatives.len(), origin.len());
        Self {
            negatives,
            negative_origin: origin,
            ..self.clone()
        }
    }
}

/// Splits by event count: the first `⌊train_frac·|E|⌋` events, the next
/// `⌊val_frac·|E|⌋`, and the remainder.
pub fn chronological_split(
    stream: &EventStream,
    train_frac: f64,
    val_frac: f64,
) -> Result<(EventStream, EventStream, EventStream)> {
    let in_unit = |f: f64| f > 0.0 && f < 1.0;
    if !in_unit(train_frac) || !in_unit(val_frac) || train_frac + val_frac >= 1.0 {
        return Err(Error::arg(format!(
            "split fractions ({train_frac}, {val_frac}) must be in (0,1) with sum below 1"
        )));
    }
    let n = stream.len();
    let count = |f: f64| ((f * n as f64 + 1e-9).floor() as usize).min(n);
    let n_train = count(train_frac);
    let n_val = count(val_frac).min(n - n_train);
    let events = stream.events();
    Ok((
        stream.with_events(events[..n_train].to_vec()),
        stream.with_events(events[n_train..n_train + n_val].to_vec()),
        stream.with_events(events[n_train + n_val..].to_vec()),
    ))
}

/// `⌈|E|/b⌉` batches of `b` consecutive events; the last may be shorter.
pub fn partition_batches(stream: &EventStream, batch_size: usize) -> Result<Vec<TemporalBatch>> {
    if batch_size == 0 {
        return Err(Error::arg("batch size must be at least 1"));
    }
    stream
        .events()
        .chunks(batch_size)
        .enumerate()
        .map(|(i, chunk)| TemporalBatch::new(i, i * batch_size, chunk.to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stream(times: &[f64]) -> EventStream {
        let events = times
            .iter()
            .enumerate()
            .map(|(k, &t)| Event::positive(k % 3, 3 + k % 2, t, vec![k as f64]))
            .collect();
        EventStream::new(events, 5, 1).unwrap()
    }

    fn times(s: &EventStream) -> Vec<f64> {
        s.events().iter().map(|e| e.timestamp).collect()
    }

    #[test]
    fn split_by_count() {
        let s = stream(&(1..=10).map(f64::from).collect::<Vec<_>>());
        let (tr, va, te) = chronological_split(&s, 0.7, 0.15).unwrap();
        assert_eq!(times(&tr), (1..=7).map(f64::from).collect::<Vec<_>>());
        assert_eq!(times(&va), vec![8.0]);
        assert_eq!(times(&te), vec![9.0, 10.0]);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let s = stream(&[1.0, 2.0]);
        for (a, b) in [
            (0.9, 0.2),
            (0.0, 0.5),
            (0.5, 0.0),
            (1.0, 0.1),
            (f64::NAN, 0.1),
        ] {
            assert!(matches!(
                chronological_split(&s, a, b),
                Err(Error::Argument(_))
            ));
        }
    }

    #[test]
    fn split_count_oracle() {
        // ⌊0.7 · 157474⌋ = ⌊110231.8⌋
        let n: usize = 157_474;
        let expected = (7 * n) / 10;
        assert_eq!(expected, 110_231);
        let s = stream(&vec![0.0; n]);
        let (tr, va, te) = chronological_split(&s, 0.7, 0.15).unwrap();
        assert_eq!(tr.len(), expected);
        assert_eq!(va.len(), (15 * n) / 100);
        assert_eq!(tr.len() + va.len() + te.len(), n);
    }

    #[test]
    fn partition_sizes() {
        let s = stream(&(0..10).map(f64::from).collect::<Vec<_>>());
        let sizes: Vec<usize> = partition_batches(&s, 4)
            .unwrap()
            .iter()
            .map(|b| b.len())
            .collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let s = stream(&(0..8).map(f64::from).collect::<Vec<_>>());
        let batches = partition_batches(&s, 8).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].interval(), (0.0, 7.0));
        assert!(matches!(partition_batches(&s, 0), Err(Error::Argument(_))));
    }

    proptest! {
        #[test]
        fn partition_is_complete(
            gaps in prop::collection::vec(0u8..3, 1..60),
            b in 1usize..20,
        ) {
            let mut t = 0.0;
            let ts: Vec<f64> = gaps.iter().map(|&g| { t += f64::from(g); t }).collect();
            let s = stream(&ts);
            let batches = partition_batches(&s, b).unwrap();
            prop_assert_eq!(batches.len(), s.len().div_ceil(b));
            let joined: Vec<Event> = batches.iter().flat_map(|b| b.positives().to_vec()).collect();
            prop_assert_eq!(joined.as_slice(), s.events());
            for w in batches.windows(2) {
                prop_assert!(w[0].interval().1 <= w[1].interval().0);
                prop_assert_eq!(w[0].start() + w[0].len(), w[1].start());
            }
            for batch in &batches[..batches.len() - 1] {
                prop_assert_eq!(batch.len(), b);
            }
        }
    }
}
