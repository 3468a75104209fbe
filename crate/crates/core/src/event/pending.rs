use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::event::{partition_batches, Event, EventStream, TemporalBatch};

/// Indices of earlier positives in `batch` that share a vertex with positive
/// `k` and have a strictly smaller timestamp.
pub fn pending_indices(batch: &TemporalBatch, k: usize) -> Result<Vec<usize>> {
    let events = batch.positives();
    let e = events
        .get(k)
        .ok_or_else(|| Error::arg(format!("event {k} not in batch of {}", events.len())))?;
    Ok(events[..k]
        .iter()
        .enumerate()
        .filter(|(_, p)| p.timestamp < e.timestamp && p.shares_vertex(e))
        .map(|(j, _)| j)
        .collect())
}

/// The pending events of `e`, which must be one of the batch positives.
pub fn pending_set(e: &Event, batch: &TemporalBatch) -> Result<Vec<Event>> {
    let k = batch
        .positives()
        .iter()
        .position(|p| p == e)
        .ok_or_else(|| Error::arg("event is not a positive of the batch"))?;
    Ok(pending_indices(batch, k)?
        .into_iter()
        .map(|j| batch.positives()[j].clone())
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendingStats {
    pub batch_index: usize,
    pub num_positives: usize,
    /// Events with a non-empty pending set.
    pub num_pending: usize,
    /// Events in the longest chain where each pends on the next.
    pub max_chain: usize,
    pub frac_pending: f64,
}

/// Linear-time pending statistics, processing equal timestamps as a group so
/// that simultaneous events never pend on each other.
pub fn pending_stats(batch: &TemporalBatch) -> PendingStats {
    let events = batch.positives();
    let mut best: HashMap<usize, usize> = HashMap::new();
    let mut num_pending = 0;
    let mut max_chain = 0;
    let mut group_start = 0;
    let mut staged: Vec<(usize, usize)> = Vec::new();
    while group_start < events.len() {
        let t = events[group_start].timestamp;
        let group_end = group_start
            + events[group_start..]
                .iter()
                .take_while(|e| e.timestamp == t)
                .count();
        staged.clear();
        for e in &events[group_start..group_end] {
            let a = best.get(&e.src).copied().unwrap_or(0);
            let b = best.get(&e.dst).copied().unwrap_or(0);
            if a.max(b) > 0 {
                num_pending += 1;
            }
            let chain = 1 + a.max(b);
            max_chain = max_chain.max(chain);
            staged.push((e.src, chain));
            staged.push((e.dst, chain));
        }
        for &(v, c) in &staged {
            let slot = best.entry(v).or_insert(0);
            *slot = (*slot).max(c);
        }
        group_start = group_end;
    }
    PendingStats {
        batch_index: batch.index(),
        num_positives: events.len(),
        num_pending,
        max_chain,
        frac_pending: if events.is_empty() {
            0.0
        } else {
            num_pending as f64 / events.len() as f64
        },
    }
}

/// Fraction of all stream events that have a pending event under batch size `b`.
pub fn stream_pending_fraction(stream: &EventStream, batch_size: usize) -> Result<f64> {
    if stream.is_empty() {
        return Err(Error::EmptyStream);
    }
    let pending: usize = partition_batches(stream, batch_size)?
        .iter()
        .map(|b| pending_stats(b).num_pending)
        .sum();
    Ok(pending as f64 / stream.len() as f64)
}

pub fn write_pending_stats_csv(w: impl Write, stats: &[PendingStats]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.into());
    out.write_record([
        "batch_index",
        "num_positives",
        "num_pending",
        "max_chain",
        "frac_pending",
    ])
    .map_err(io)?;
    for s in stats {
        out.write_record([
            s.batch_index.to_string(),
            s.num_positives.to_string(),
            s.num_pending.to_string(),
            s.max_chain.to_string(),
            s.frac_pending.to_string(),
        ])
        .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn batch(pairs: &[(usize, usize, f64)]) -> TemporalBatch {
        TemporalBatch::new(
            0,
            0,
            pairs
                .iter()
                .map(|&(s, d, t)| Event::positive(s, d, t, vec![]))
                .collect(),
        )
        .unwrap()
    }

    fn brute_pending(b: &TemporalBatch, k: usize) -> Vec<usize> {
        let ev = b.positives();
        (0..ev.len())
            .filter(|&j| {
                let shared = [ev[j].src, ev[j].dst]
                    .iter()
                    .any(|v| *v == ev[k].src || *v == ev[k].dst);
                shared && ev[j].timestamp < ev[k].timestamp
            })
            .collect()
    }

    fn brute_chain(b: &TemporalBatch) -> usize {
        fn longest(b: &TemporalBatch, k: usize) -> usize {
            1 + brute_pending(b, k)
                .into_iter()
                .map(|j| longest(b, j))
                .max()
                .unwrap_or(0)
        }
        (0..b.len()).map(|k| longest(b, k)).max().unwrap_or(0)
    }

    #[test]
    fn pending_examples() {
        let b = batch(&[(1, 2, 1.0), (2, 3, 2.0), (4, 5, 3.0)]);
        assert_eq!(
            pending_set(&b.positives()[1], &b).unwrap(),
            vec![b.positives()[0].clone()]
        );
        assert!(pending_set(&b.positives()[2], &b).unwrap().is_empty());
        assert!(pending_set(&b.positives()[0], &b).unwrap().is_empty());
        let outsider = Event::positive(9, 9, 0.0, vec![]);
        assert!(matches!(
            pending_set(&outsider, &b),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn simultaneous_events_do_not_pend() {
        let b = batch(&[(1, 2, 1.0), (2, 3, 1.0)]);
        assert!(pending_indices(&b, 0).unwrap().is_empty());
        assert!(pending_indices(&b, 1).unwrap().is_empty());
        assert_eq!(pending_stats(&b).num_pending, 0);
    }

    #[test]
    fn stats_examples() {
        let distinct = batch(&[(0, 1, 1.0), (2, 3, 2.0), (4, 5, 3.0)]);
        assert_eq!(pending_stats(&distinct).frac_pending, 0.0);
        let chain = batch(&[(0, 1, 1.0), (0, 1, 2.0), (0, 1, 3.0)]);
        let st = pending_stats(&chain);
        assert_eq!((st.num_pending, st.max_chain), (2, 3));
        assert_eq!(
            st.num_pending,
            (0..3)
                .filter(|&k| !brute_pending(&chain, k).is_empty())
                .count()
        );
        assert_eq!(st.max_chain, brute_chain(&chain));
    }

    #[test]
    fn csv_layout() {
        let b = batch(&[(0, 1, 1.0), (0, 2, 2.0)]);
        let mut buf = Vec::new();
        write_pending_stats_csv(&mut buf, &[pending_stats(&b)]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "batch_index,num_positives,num_pending,max_chain,frac_pending\n0,2,1,2,0.5\n"
        );
    }

    fn arb_batch() -> impl Strategy<Value = TemporalBatch> {
        prop::collection::vec((0usize..6, 0usize..6, 0u8..3), 0..25).prop_map(|raw| {
            let mut t = 0.0;
            let pairs: Vec<_> = raw
                .into_iter()
                .map(|(s, d, g)| {
                    t += f64::from(g);
                    (s, d, t)
                })
                .collect();
            batch(&pairs)
        })
    }

    proptest! {
        #[test]
        fn pending_matches_brute_force(b in arb_batch()) {
            for k in 0..b.len() {
                prop_assert_eq!(pending_indices(&b, k).unwrap(), brute_pending(&b, k));
            }
            let st = pending_stats(&b);
            let expected = (0..b.len()).filter(|&k| !brute_pending(&b, k).is_empty()).count();
            prop_assert_eq!(st.num_pending, expected);
            prop_assert_eq!(st.max_chain, brute_chain(&b));
        }

        #[test]
        fn pending_is_asymmetric(b in arb_batch()) {
            for k in 0..b.len() {
                for j in pending_indices(&b, k).unwrap() {
                    prop_assert!(!pending_indices(&b, j).unwrap().contains(&k));
                }
            }
        }

        #[test]
        fn merging_batches_never_shrinks_pending_sets(
            raw in prop::collection::vec((0usize..6, 0usize..6, 0u8..3), 2..40),
            b in 1usize..10,
        ) {
            let mut t = 0.0;
            let events: Vec<Event> = raw
                .into_iter()
                .map(|(s, d, g)| { t += f64::from(g); Event::positive(s, d, t, vec![]) })
                .collect();
            let stream = EventStream::new(events, 6, 0).unwrap();
            let small = partition_batches(&stream, b).unwrap();
            let large = partition_batches(&stream, 2 * b).unwrap();
            for (i, batch) in small.iter().enumerate() {
                let merged = &large[i / 2];
                let offset = batch.start() - merged.start();
                for k in 0..batch.len() {
                    let inner: Vec<usize> = pending_indices(batch, k)
                        .unwrap()
                        .into_iter()
                        .map(|j| j + offset)
                        .collect();
                    let outer = pending_indices(merged, k + offset).unwrap();
                    prop_assert!(inner.iter().all(|j| outer.contains(j)));
                }
            }
            prop_assert!(
                stream_pending_fraction(&stream, b).unwrap()
                    <= stream_pending_fraction(&stream, 2 * b).unwrap()
            );
        }
    }
}
