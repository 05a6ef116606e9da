//! Warmup adaptation: dual-averaging step size and windowed diagonal metric.

/// Nesterov dual averaging of `log(step_size)` toward a target acceptance statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct DualAveraging {
    pub gamma: f64,
    pub t0: f64,
    pub kappa: f64,
    pub delta: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    pub fn new(target_accept: f64, initial_step_size: f64) -> Self {
        let mut da = Self {
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            delta: target_accept,
            mu: 0.0,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        };
        da.restart(initial_step_size);
        da
    }

    /// Resets the averages and recentres the shrinkage point at `log(10 * step_size)`.
    pub fn restart(&mut self, step_size: f64) {
        self.mu = (10.0 * step_size).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Folds in one acceptance statistic and returns the next step size.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        let accept_stat = if accept_stat.is_nan() { 0.0 } else { accept_stat.min(1.0) };
        self.counter += 1.0;
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept_stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    /// The averaged step size used after warmup.
    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }

    /// Runs [`update`](Self::update) over a history and returns the last step size.
    pub fn adapt_step_size(history: &[f64], target_accept: f64, initial_step_size: f64) -> f64 {
        let mut da = Self::new(target_accept, initial_step_size);
        history.iter().fold(initial_step_size, |_, &a| da.update(a))
    }
}

/// Warmup window boundaries: an initial fast buffer, doubling slow windows,
/// and a terminal fast buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSchedule {
    num_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
}

impl WindowSchedule {
    pub const INIT_BUFFER: usize = 75;
    pub const BASE_WINDOW: usize = 25;
    pub const TERM_BUFFER: usize = 50;

    pub fn new(num_warmup: usize) -> Self {
        let (mut init, mut term, mut base) = (Self::INIT_BUFFER, Self::TERM_BUFFER, Self::BASE_WINDOW);
        if init + term + base > num_warmup {
            init = (0.15 * num_warmup as f64) as usize;
            term = (0.1 * num_warmup as f64) as usize;
            base = num_warmup.saturating_sub(init + term);
        }
        Self {
            num_warmup,
            init_buffer: init,
            term_buffer: term,
            window_size: base,
            next_window: init + base - 1,
            counter: 0,
        }
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer
            && self.counter < self.num_warmup - self.term_buffer
            && self.counter != self.num_warmup
    }

    fn at_window_end(&self) -> bool {
        self.counter == self.next_window && self.counter != self.num_warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.num_warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last && self.next_window + 2 * self.window_size >= self.num_warmup - self.term_buffer {
            self.next_window = last;
        }
    }

    /// Advances one iteration. Returns `(collect, close)`: whether this
    /// iteration's draw belongs to a slow window, and whether that window ends here.
    pub fn step(&mut self) -> (bool, bool) {
        let collect = self.in_window();
        let close = self.at_window_end();
        if close {
            self.compute_next_window();
        }
        self.counter += 1;
        (collect, close)
    }
}

/// Shrinkage target for the metric estimate.
const REGULARIZATION_TARGET: f64 = 1e-3;

/// Regularized diagonal variance of a window of unconstrained draws.
///
/// Returns `(n/(n+5)) * var + 1e-3 * (5/(n+5))` per coordinate, which stays
/// positive for degenerate windows.
pub fn adapt_mass(window: &[Vec<f64>]) -> Vec<f64> {
    assert!(window.len() >= 2, "mass adaptation needs at least two draws");
    let mut acc = MassAdaptation::new(window[0].len());
    for q in window {
        acc.add(q);
    }
    acc.estimate()
}

/// Streaming (Welford) variance accumulator for the diagonal metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MassAdaptation {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl MassAdaptation {
    pub fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn add(&mut self, q: &[f64]) {
        self.n += 1;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(q) {
            let d = x - *m;
            *m += d / self.n as f64;
            *s += d * (x - *m);
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn estimate(&self) -> Vec<f64> {
        let n = self.n as f64;
        let w = n / (n + 5.0);
        self.m2
            .iter()
            .map(|s| {
                let var = if self.n > 1 { s / (n - 1.0) } else { 0.0 };
                w * var + REGULARIZATION_TARGET * (5.0 / (n + 5.0))
            })
            .collect()
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.mean.len());
    }
}
