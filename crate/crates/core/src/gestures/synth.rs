//! Synthetic multi-subject gesture recordings.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{GestureLabel, Recording, JOINTS};

pub const NOMINAL_FPS: f64 = 60.0;
pub const RECORDING_FRAMES: usize = 60;
/// Background recordings run longer so the open class is better covered.
pub const BACKGROUND_FRAMES: usize = 120;

const THUMB: std::ops::Range<usize> = 0..3;
const INDEX: std::ops::Range<usize> = 3..7;
const CURL_HZ: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSubject {
    pub name: String,
    pub amplitude: f64,
    pub tempo: f64,
    pub offsets: [f64; JOINTS],
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSubject {
    /// Unit scales, zero offsets and no noise.
    pub fn ideal(name: impl Into<String>, seed: u64) -> Self {
        Self {
            name: name.into(),
            amplitude: 1.0,
            tempo: 1.0,
            offsets: [0.0; JOINTS],
            noise_sigma: 0.0,
            seed,
        }
    }
}

/// Subjects `subject-0` .. `subject-{n-1}` with seeded per-subject warps.
pub fn standard_subjects(n: usize) -> Vec<SyntheticSubject> {
    (0..n)
        .map(|i| {
            let seed = 1000 + i as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut offsets = [0.0; JOINTS];
            for o in &mut offsets {
                *o = rng.random_range(-0.08..0.08);
            }
            SyntheticSubject {
                name: format!("subject-{i}"),
                amplitude: rng.random_range(0.85..1.15),
                tempo: rng.random_range(0.8..1.25),
                offsets,
                noise_sigma: 0.03,
                seed,
            }
        })
        .collect()
}

/// Deterministic class template at phase time `tau` (s). Background has no
/// fixed template.
pub fn template_frame(label: GestureLabel, tau: f64) -> Option<[f64; JOINTS]> {
    let mut f = [0.0; JOINTS];
    match label {
        GestureLabel::Stop => f.fill(0.05),
        GestureLabel::ComeHere => {
            let curl = 0.3 + 0.5 * (1.0 - (2.0 * PI * CURL_HZ * tau).cos());
            f.fill(curl);
            f[THUMB].fill(0.5);
        }
        GestureLabel::Point => {
            f.fill(1.3);
            f[THUMB].fill(0.7);
            f[INDEX].fill(0.05);
        }
        GestureLabel::Background => return None,
    }
    Some(f)
}

fn background_walk(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; JOINTS]> {
    let step = Normal::new(0.0, 0.03).expect("valid sigma");
    let mut angle = [0.0f64; JOINTS];
    let mut vel = [0.0; JOINTS];
    for a in &mut angle {
        *a = rng.random_range(0.1..1.4);
    }
    (0..n)
        .map(|_| {
            for j in 0..JOINTS {
                vel[j] = 0.9 * vel[j] + step.sample(rng);
                angle[j] = (angle[j] + vel[j]).clamp(-0.2, 1.6);
            }
            angle
        })
        .collect()
}

fn recording_rng(subject: &SyntheticSubject, label: GestureLabel, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(subject.seed);
    rng.set_stream((label.index() as u64) << 32 | rep as u64);
    rng
}

/// `reps` recordings of every class for every subject, in subject, class,
/// repetition order.
pub fn generate_dataset(subjects: &[SyntheticSubject], reps: usize) -> Vec<Recording> {
    let mut out = Vec::with_capacity(subjects.len() * 4 * reps);
    for s in subjects {
        let noise = Normal::new(0.0, s.noise_sigma.max(0.0)).expect("valid sigma");
        for label in GestureLabel::ALL {
            for rep in 0..reps {
                let mut rng = recording_rng(s, label, rep);
                let base: Vec<[f64; JOINTS]> = match label {
                    GestureLabel::Background => background_walk(&mut rng, BACKGROUND_FRAMES),
                    _ => (0..RECORDING_FRAMES)
                        .map(|k| template_frame(label, s.tempo * k as f64 / NOMINAL_FPS).expect("template"))
                        .collect(),
                };
                let frames = base
                    .into_iter()
                    .map(|t| {
                        let mut f = [0.0; JOINTS];
                        for j in 0..JOINTS {
                            let n = if s.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                            f[j] = (s.offsets[j] + s.amplitude * t[j] + n).clamp(-PI, PI);
                        }
                        f
                    })
                    .collect();
                out.push(Recording {
                    subject: s.name.clone(),
                    label,
                    fps: NOMINAL_FPS,
                    frames,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn protocol_counts() {
        let data = generate_dataset(&standard_subjects(6), 2);
        assert_eq!(data.len(), 48);
        assert!(data.iter().all(|r| r.frames.len() >= 60 && r.fps == 60.0));
        assert_eq!(data.iter().filter(|r| r.subject == "subject-5").count(), 8);
    }

    #[test]
    fn ideal_subject_reproduces_templates() {
        let data = generate_dataset(&[SyntheticSubject::ideal("s", 3)], 1);
        let stop = &data[0];
        assert_eq!(stop.label, GestureLabel::Stop);
        assert!(stop.frames.iter().all(|f| f == &[0.05; JOINTS]));
        let come = &data[1];
        // Golden values of the curl at frames 0, 10 and 20 (phase 0, 1/4, 1/2 of a cycle).
        assert_eq!(come.frames[0][5], 0.3);
        assert!((come.frames[10][5] - 0.8).abs() < 1e-12);
        assert!((come.frames[20][5] - 1.3).abs() < 1e-12);
        assert_eq!(come.frames[7][1], 0.5);
        let point = &data[2];
        let mut expected = [1.3; JOINTS];
        expected[..3].fill(0.7);
        expected[3..7].fill(0.05);
        assert!(point.frames.iter().all(|f| f == &expected));
    }

    #[test]
    fn seeds_change_noise_not_labels() {
        let mut a = standard_subjects(1);
        let mut b = a.clone();
        a[0].seed = 1;
        b[0].seed = 2;
        let (da, db) = (generate_dataset(&a, 2), generate_dataset(&b, 2));
        assert!(da.iter().zip(&db).all(|(x, y)| x.label == y.label));
        assert!(da.iter().zip(&db).all(|(x, y)| x.frames != y.frames));
        assert_eq!(da, generate_dataset(&a, 2));
    }
}
