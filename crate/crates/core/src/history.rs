use std::collections::VecDeque;

/// Committed samples of the delayed quantities (separator temperature and valve opening).
///
/// Lookups interpolate linearly between samples; queries before the first sample return
/// the pre-history values.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    samples: VecDeque<Sample>,
    initial_t_sep: f64,
    initial_valve: f64,
    span: f64,
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    t: f64,
    t_sep: f64,
    valve: f64,
}

impl HistoryBuffer {
    /// `span` is the longest delay that will be queried.
    pub fn new(span: f64, initial_t_sep: f64, initial_valve: f64) -> Self {
        Self {
            samples: VecDeque::new(),
            initial_t_sep,
            initial_valve,
            span: span.max(0.0),
        }
    }

    /// Append a sample; times must be non-decreasing. A sample at the same time as the
    /// latest one replaces it.
    pub fn push(&mut self, t: f64, t_sep: f64, valve: f64) {
        if let Some(last) = self.samples.back_mut() {
            debug_assert!(t >= last.t, "history must be pushed in time order");
            if t == last.t {
                *last = Sample { t, t_sep, valve };
                return;
            }
        }
        self.samples.push_back(Sample { t, t_sep, valve });
        // Keep one sample older than t - span so interpolation at the horizon still works.
        while self.samples.len() > 2 && self.samples[1].t <= t - self.span {
            self.samples.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn t_sep_at(&self, t: f64) -> f64 {
        self.lookup(t, self.initial_t_sep, |s| s.t_sep)
    }

    pub fn valve_at(&self, t: f64) -> f64 {
        self.lookup(t, self.initial_valve, |s| s.valve)
    }

    fn lookup(&self, t: f64, initial: f64, field: impl Fn(&Sample) -> f64) -> f64 {
        let (first, last) = match (self.samples.front(), self.samples.back()) {
            (Some(f), Some(l)) => (f, l),
            _ => return initial,
        };
        if t < first.t {
            return initial;
        }
        if t >= last.t {
            return field(last);
        }
        // First sample strictly after t; exists because t < last.t.
        let hi = self.samples.partition_point(|s| s.t <= t);
        let (a, b) = (&self.samples[hi - 1], &self.samples[hi]);
        let w = (t - a.t) / (b.t - a.t);
        field(a) + w * (field(b) - field(a))
    }
}
