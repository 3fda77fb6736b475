//! Rational-ratio windowed-sinc polyphase resampler.
//!
//! Each output sample is a 64-tap dot product over the input, with the tap weights
//! chosen by the output's fractional phase. The prototype low-pass is a Kaiser-windowed
//! sinc (beta = 8, roughly 80 dB stopband) whose cutoff is placed half a transition band
//! below the lower of the two Nyquist frequencies.

pub const TAPS: usize = 64;
pub const KAISER_BETA: f64 = 8.0;

// beyond this many phases the table is computed on the fly
const MAX_TABLE_PHASES: usize = 4096;

#[derive(Debug, Clone)]
pub struct Resampler {
    up: u64,
    down: u64,
    cutoff: f64,
    table: Option<Vec<f64>>,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= half / k as f64;
        let t2 = term * term;
        sum += t2;
        if t2 < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser(x: f64, beta: f64, i0_beta: f64) -> f64 {
    if x.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(beta * (1.0 - x * x).sqrt()) / i0_beta
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

impl Resampler {
    pub fn new(from_hz: u32, to_hz: u32) -> Self {
        let g = gcd(from_hz as u64, to_hz as u64).max(1);
        let up = to_hz as u64 / g;
        let down = from_hz as u64 / g;
        // Kaiser design relation: transition width in cycles per input sample
        let atten_db = KAISER_BETA / 0.1102 + 8.7;
        let transition = (atten_db - 7.95) / (14.36 * TAPS as f64);
        let nyquist = 0.5 * (up as f64 / down as f64).min(1.0);
        let cutoff = (nyquist - transition / 2.0).max(0.5 * nyquist);
        let mut r = Self {
            up,
            down,
            cutoff,
            table: None,
        };
        if up as usize <= MAX_TABLE_PHASES && up != down {
            let mut table = Vec::with_capacity(up as usize * TAPS);
            for p in 0..up {
                table.extend(r.phase_filter(p));
            }
            r.table = Some(table);
        }
        r
    }

    pub fn ratio(&self) -> (u64, u64) {
        (self.up, self.down)
    }

    /// Cutoff of the prototype low-pass, in cycles per input sample.
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    fn phase_filter(&self, phase: u64) -> Vec<f64> {
        let frac = phase as f64 / self.up as f64;
        let half = (TAPS / 2) as f64;
        let i0_beta = bessel_i0(KAISER_BETA);
        let mut h: Vec<f64> = (0..TAPS)
            .map(|k| {
                // tap k reads input index floor(t) - (TAPS/2 - 1) + k
                let x = frac + (TAPS / 2 - 1) as f64 - k as f64;
                2.0 * self.cutoff
                    * sinc(2.0 * self.cutoff * x)
                    * kaiser(x / half, KAISER_BETA, i0_beta)
            })
            .collect();
        let sum: f64 = h.iter().sum();
        for v in &mut h {
            *v /= sum;
        }
        h
    }

    pub fn output_len(&self, n_in: usize) -> usize {
        ((n_in as u64 * self.up).div_ceil(self.down)) as usize
    }

    pub fn process(&self, input: &[f32]) -> Vec<f32> {
        if self.up == self.down {
            return input.to_vec();
        }
        let n_out = self.output_len(input.len());
        let n_in = input.len() as i64;
        let mut out = Vec::with_capacity(n_out);
        let mut scratch;
        for n in 0..n_out as u64 {
            let pos = n * self.down;
            let base = (pos / self.up) as i64;
            let phase = pos % self.up;
            let h: &[f64] = match &self.table {
                Some(t) => &t[phase as usize * TAPS..(phase as usize + 1) * TAPS],
                None => {
                    scratch = self.phase_filter(phase);
                    &scratch
                }
            };
            let first = base - (TAPS as i64 / 2 - 1);
            let mut acc = 0.0f64;
            for (k, &w) in h.iter().enumerate() {
                let idx = first + k as i64;
                if (0..n_in).contains(&idx) {
                    acc += w * input[idx as usize] as f64;
                }
            }
            out.push(acc as f32);
        }
        out
    }
}

pub fn resample(input: &[f32], from_hz: u32, to_hz: u32) -> Vec<f32> {
    Resampler::new(from_hz, to_hz).process(input)
}
