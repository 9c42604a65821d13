use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{to_bow, CorpusError, Document, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Month,
    Year,
    /// Strictly increasing edges e₀ < … < e_T; slice t covers [e_{t−1}, e_t),
    /// the last one closed on the right.
    Custom(Vec<NaiveDate>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSlice {
    /// 1-based slice number.
    pub index: usize,
    pub start: NaiveDate,
    /// Exclusive, except for the last custom slice.
    pub end: NaiveDate,
    pub documents: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSlicedCorpus {
    pub slices: Vec<TimeSlice>,
    /// Normalized aggregate bag of words per slice; all zeros for a slice
    /// with no in-vocabulary tokens.
    pub slice_bow: Vec<Vec<f64>>,
    /// 0-based slice of every input document.
    pub doc_slice: Vec<usize>,
}

impl TimeSlicedCorpus {
    pub fn num_slices(&self) -> usize {
        self.slices.len()
    }
}

fn month_start(d: NaiveDate) -> NaiveDate {
    NaiveDate::from_ymd_opt(d.year(), d.month(), 1).unwrap()
}

fn next_month(d: NaiveDate) -> NaiveDate {
    if d.month() == 12 {
        NaiveDate::from_ymd_opt(d.year() + 1, 1, 1).unwrap()
    } else {
        NaiveDate::from_ymd_opt(d.year(), d.month() + 1, 1).unwrap()
    }
}

fn year_start(d: NaiveDate) -> NaiveDate {
    NaiveDate::from_ymd_opt(d.year(), 1, 1).unwrap()
}

fn next_year(d: NaiveDate) -> NaiveDate {
    NaiveDate::from_ymd_opt(d.year() + 1, 1, 1).unwrap()
}

/// Bins timestamped documents into contiguous slices covering the observed
/// date range. Empty interior slices are kept.
pub fn time_slice(docs: &[Document], granularity: &Granularity, vocab: &Vocabulary) -> Result<TimeSlicedCorpus, CorpusError> {
    let missing: Vec<usize> = docs
        .iter()
        .enumerate()
        .filter(|(_, d)| d.timestamp.is_none())
        .map(|(i, _)| i)
        .collect();
    if !missing.is_empty() {
        return Err(CorpusError::MissingTimestamps(missing));
    }
    if docs.is_empty() {
        return Err(CorpusError::TooFewDocuments { needed: 1, got: 0 });
    }
    let dates: Vec<NaiveDate> = docs.iter().map(|d| d.timestamp.unwrap()).collect();
    let first = *dates.iter().min().unwrap();
    let last = *dates.iter().max().unwrap();

    let bounds: Vec<(NaiveDate, NaiveDate)> = match granularity {
        Granularity::Month | Granularity::Year => {
            let (start, step): (fn(NaiveDate) -> NaiveDate, fn(NaiveDate) -> NaiveDate) =
                if *granularity == Granularity::Month {
                    (month_start, next_month)
                } else {
                    (year_start, next_year)
                };
            let mut out = Vec::new();
            let mut s = start(first);
            while s <= last {
                let e = step(s);
                out.push((s, e));
                s = e;
            }
            out
        }
        Granularity::Custom(edges) => {
            if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(CorpusError::InvalidEdges);
            }
            edges.windows(2).map(|w| (w[0], w[1])).collect()
        }
    };
    let custom = matches!(granularity, Granularity::Custom(_));
    let n_slices = bounds.len();

    let mut doc_slice = Vec::with_capacity(docs.len());
    for (i, &d) in dates.iter().enumerate() {
        let slot = bounds
            .iter()
            .position(|&(s, e)| d >= s && (d < e || (custom && d == e && e == bounds[n_slices - 1].1)));
        match slot {
            Some(t) => doc_slice.push(t),
            None => return Err(CorpusError::OutsideSlices { doc: i, date: d }),
        }
    }

    let v = vocab.len();
    let mut slices: Vec<TimeSlice> = bounds
        .iter()
        .enumerate()
        .map(|(t, &(start, end))| TimeSlice {
            index: t + 1,
            start,
            end,
            documents: Vec::new(),
        })
        .collect();
    let mut sums = vec![vec![0.0; v]; n_slices];
    for (i, doc) in docs.iter().enumerate() {
        let t = doc_slice[i];
        slices[t].documents.push(i);
        if let Ok(bow) = to_bow(doc, vocab) {
            for (w, c) in bow.entries {
                sums[t][w] += c as f64;
            }
        }
    }
    for row in &mut sums {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|x| *x /= total);
        }
    }
    Ok(TimeSlicedCorpus {
        slices,
        slice_bow: sums,
        doc_slice,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(vec!["a".into(), "b".into()], vec![1, 1], false)
    }

    #[test]
    fn yearly_two_slices() {
        let docs = vec![
            Document::new(&["a"]).with_timestamp(date(1970, 5, 1)),
            Document::new(&["b"]).with_timestamp(date(1971, 2, 1)),
        ];
        let ts = time_slice(&docs, &Granularity::Year, &vocab()).unwrap();
        assert_eq!(ts.num_slices(), 2);
        assert_eq!(ts.doc_slice, vec![0, 1]);
    }

    #[test]
    fn one_month_aggregate() {
        let docs = vec![
            Document::new(&["a", "a"]).with_timestamp(date(2000, 3, 1)),
            Document::new(&["b"]).with_timestamp(date(2000, 3, 15)),
            Document::new(&["a"]).with_timestamp(date(2000, 3, 31)),
        ];
        let ts = time_slice(&docs, &Granularity::Month, &vocab()).unwrap();
        assert_eq!(ts.num_slices(), 1);
        assert_eq!(ts.slice_bow[0], vec![0.75, 0.25]);
    }

    #[test]
    fn empty_interior_slice_is_kept() {
        let docs = vec![
            Document::new(&["a"]).with_timestamp(date(2000, 1, 10)),
            Document::new(&["b"]).with_timestamp(date(2000, 3, 10)),
        ];
        let ts = time_slice(&docs, &Granularity::Month, &vocab()).unwrap();
        assert_eq!(ts.num_slices(), 3);
        assert!(ts.slices[1].documents.is_empty());
        assert_eq!(ts.slice_bow[1], vec![0.0, 0.0]);
    }

    #[test]
    fn custom_edges_and_errors() {
        let docs = vec![
            Document::new(&["a"]).with_timestamp(date(2000, 1, 1)),
            Document::new(&["b"]).with_timestamp(date(2000, 6, 30)),
        ];
        let edges = Granularity::Custom(vec![date(2000, 1, 1), date(2000, 4, 1), date(2000, 6, 30)]);
        let ts = time_slice(&docs, &edges, &vocab()).unwrap();
        assert_eq!(ts.doc_slice, vec![0, 1]);
        let bad = Granularity::Custom(vec![date(2000, 1, 1), date(2000, 2, 1)]);
        assert!(matches!(time_slice(&docs, &bad, &vocab()), Err(CorpusError::OutsideSlices { doc: 1, .. })));
        let undated = vec![Document::new(&["a"]), docs[0].clone(), Document::new(&["b"])];
        assert_eq!(
            time_slice(&undated, &Granularity::Year, &vocab()),
            Err(CorpusError::MissingTimestamps(vec![0, 2]))
        );
    }
}
