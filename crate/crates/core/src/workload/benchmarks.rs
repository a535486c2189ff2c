use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Instruction, Program, WorkloadError};
use crate::cache::CacheGeometry;

/// Anonymous-mapping region label, matching what a maps listing shows for
/// large malloc'd buffers.
pub const ANON: &str = "[anon]";

/// Region used by the replacement-policy probes.
pub const REPL_REGION: &str = "repl";

/// Catalogue of synthetic workloads.
#[derive(Debug, Clone, PartialEq)]
pub enum Benchmark {
    /// Two buffers; each iteration writes then reads the first, then writes
    /// then reads the second.
    Synth { buffer: u64, iterations: u64 },
    /// Same traffic as `Synth`, signalling the trigger after each of the four
    /// sub-passes.
    SynthStep { buffer: u64, iterations: u64 },
    /// Sequential reads over a buffer larger than the cache.
    Bomb { size: u64, passes: u64 },
    /// Touches the `ways` lines that map to set 0 of a cache-aligned,
    /// cache-sized huge buffer `iterations` times, then optionally signals.
    Repl { iterations: u64, signal: bool },
    /// Baseline signal, then one signal after touching each of the set-0 lines.
    ReplStep,
    Vision(VisionParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    pub name: String,
    pub size: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Sequential,
    /// Visit every `stride`-th line, then shift by one, until the span is covered.
    Strided { stride: u64 },
    /// Fixed random permutation of the span's lines.
    Shuffled { seed: u64 },
}

/// One phase of a vision-kernel analogue: `passes` sweeps over the
/// `[from, to)` fraction of a region.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub region: String,
    pub from: f64,
    pub to: f64,
    pub pattern: Pattern,
    pub passes: u64,
    pub write: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisionParams {
    pub name: String,
    pub regions: Vec<RegionSpec>,
    pub phases: Vec<Phase>,
}

impl VisionParams {
    /// Multiplies every phase's pass count by `factor` (minimum one pass).
    pub fn scaled(mut self, factor: f64) -> Self {
        for p in &mut self.phases {
            p.passes = ((p.passes as f64 * factor).round() as u64).max(1);
        }
        self
    }
}

fn phase(region: &str, from: f64, to: f64, pattern: Pattern, passes: u64, write: bool) -> Phase {
    Phase {
        region: region.into(),
        from,
        to,
        pattern,
        passes,
        write,
    }
}

fn region(name: &str, size: u64) -> RegionSpec {
    RegionSpec {
        name: name.into(),
        size,
    }
}

const KB: u64 = 1 << 10;

/// Names accepted by [`vision_preset`].
pub const VISION_PRESETS: [&str; 4] = ["disparity", "mser", "sift", "track"];

/// Desk-scale stand-ins for four image-processing kernels, each with a
/// distinct footprint and reuse morphology:
///
/// - `disparity`: anonymous pre-processing pass, long recurring sweep over
///   most of a 1.25 MB buffer, sequential output on the heap.
/// - `mser`: strided traversal of a 768 KB heap image.
/// - `sift`: anonymous pre-processing, then two non-contiguous heap bands
///   in use, then a final pass over the top 75% of the heap.
/// - `track`: small 256 KB working set revisited in shuffled order.
pub fn vision_preset(name: &str) -> Result<VisionParams, WorkloadError> {
    use Pattern::*;
    let (regions, phases) = match name {
        "disparity" => (
            vec![region(ANON, 1280 * KB), region("heap", 256 * KB)],
            vec![
                phase(ANON, 0.0, 1.0, Sequential, 1, true),
                phase(ANON, 0.1, 0.95, Sequential, 195, false),
                phase("heap", 0.0, 1.0, Sequential, 4, true),
            ],
        ),
        "mser" => (
            vec![region(ANON, 256 * KB), region("heap", 768 * KB)],
            vec![
                phase(ANON, 0.0, 1.0, Sequential, 2, true),
                phase("heap", 0.0, 1.0, Strided { stride: 17 }, 280, false),
            ],
        ),
        "sift" => (
            vec![region(ANON, 384 * KB), region("heap", 1024 * KB)],
            vec![
                phase(ANON, 0.0, 1.0, Sequential, 3, true),
                phase("heap", 0.05, 0.3, Sequential, 1, true),
                phase("heap", 0.55, 0.8, Sequential, 1, true),
                phase("heap", 0.05, 0.3, Shuffled { seed: 11 }, 420, false),
                phase("heap", 0.55, 0.8, Shuffled { seed: 12 }, 420, false),
                phase("heap", 0.25, 1.0, Sequential, 2, true),
            ],
        ),
        "track" => (
            vec![region("heap", 256 * KB)],
            vec![
                phase("heap", 0.0, 1.0, Sequential, 1, true),
                phase("heap", 0.0, 1.0, Shuffled { seed: 5 }, 840, false),
            ],
        ),
        other => {
            return Err(WorkloadError::Config(format!(
                "unknown vision preset {other:?} (expected one of {VISION_PRESETS:?})"
            )))
        }
    };
    Ok(VisionParams {
        name: name.into(),
        regions,
        phases,
    })
}

/// Small text/glibc/stack warm-up run by the programs that model a real
/// process start.
fn prologue() -> Vec<Instruction> {
    vec![
        Instruction::read("text", 0, 16 * KB),
        Instruction::read("glibc", 0, 32 * KB),
        Instruction::write("stack", 120 * KB, 8 * KB),
    ]
}

/// Byte offsets of the lines that share set 0 in a cache-aligned buffer.
pub fn set0_offsets(geom: &CacheGeometry) -> Vec<u64> {
    (0..u64::from(geom.ways())).map(|k| k * geom.way_size()).collect()
}

pub fn build_benchmark(bench: &Benchmark, geom: &CacheGeometry) -> Result<Program, WorkloadError> {
    let line = geom.line_size();
    let aligned = |what: &str, size: u64| {
        if size == 0 || size % line != 0 {
            Err(WorkloadError::Config(format!(
                "{what} must be a positive multiple of the {line}-byte line size"
            )))
        } else {
            Ok(())
        }
    };
    let program = match bench {
        Benchmark::Synth { buffer, iterations } | Benchmark::SynthStep { buffer, iterations } => {
            aligned("synth buffer", *buffer)?;
            let step = matches!(bench, Benchmark::SynthStep { .. });
            let b = *buffer;
            let mut pass = Vec::new();
            for start in [0, b] {
                pass.push(Instruction::write(ANON, start, b));
                if step {
                    pass.push(Instruction::SignalTrigger);
                }
                pass.push(Instruction::read(ANON, start, b));
                if step {
                    pass.push(Instruction::SignalTrigger);
                }
            }
            let mut body = prologue();
            body.push(Instruction::alloc(ANON, 2 * b, false));
            body.push(Instruction::Loop {
                count: *iterations,
                body: pass,
            });
            Program::new(if step { "synth_step" } else { "synth" }, body)
        }
        Benchmark::Bomb { size, passes } => {
            aligned("bomb buffer", *size)?;
            Program::new(
                "bomb",
                vec![
                    Instruction::alloc(ANON, *size, false),
                    Instruction::Loop {
                        count: *passes,
                        body: vec![Instruction::read(ANON, 0, *size)],
                    },
                ],
            )
        }
        Benchmark::Repl { iterations, signal } => {
            let mut body = vec![
                Instruction::alloc(REPL_REGION, geom.total_size(), true),
                Instruction::Loop {
                    count: *iterations,
                    body: vec![Instruction::touch(REPL_REGION, set0_offsets(geom))],
                },
            ];
            if *signal {
                body.push(Instruction::SignalTrigger);
            }
            Program::new("repl", body)
        }
        Benchmark::ReplStep => {
            let mut body = vec![
                Instruction::alloc(REPL_REGION, geom.total_size(), true),
                Instruction::SignalTrigger,
            ];
            for off in set0_offsets(geom) {
                body.push(Instruction::touch(REPL_REGION, vec![off]));
                body.push(Instruction::SignalTrigger);
            }
            Program::new("repl_step", body)
        }
        Benchmark::Vision(params) => build_vision(params, line)?,
    };
    program.validate(line)?;
    Ok(program)
}

fn build_vision(params: &VisionParams, line: u64) -> Result<Program, WorkloadError> {
    let mut body = prologue();
    for r in &params.regions {
        if r.size == 0 || r.size % line != 0 {
            return Err(WorkloadError::Config(format!(
                "{}: region {} size must be a positive multiple of the line size",
                params.name, r.name
            )));
        }
        body.push(Instruction::alloc(&r.name, r.size, false));
    }
    for (i, p) in params.phases.iter().enumerate() {
        let size = params
            .regions
            .iter()
            .find(|r| r.name == p.region)
            .map(|r| r.size)
            .ok_or_else(|| WorkloadError::Config(format!("{}: phase {i} names unknown region {}", params.name, p.region)))?;
        if !(0.0..1.0).contains(&p.from) || !(p.from < p.to && p.to <= 1.0) {
            return Err(WorkloadError::Config(format!(
                "{}: phase {i} span [{}, {}) is not a sub-range of [0, 1)",
                params.name, p.from, p.to
            )));
        }
        let lines = size / line;
        let first = (p.from * lines as f64).floor() as u64;
        let last = ((p.to * lines as f64).ceil() as u64).min(lines).max(first + 1);
        let sweep = match p.pattern {
            Pattern::Sequential => {
                let (start, len) = (first * line, (last - first) * line);
                if p.write {
                    Instruction::write(&p.region, start, len)
                } else {
                    Instruction::read(&p.region, start, len)
                }
            }
            Pattern::Strided { stride } => {
                if stride == 0 {
                    return Err(WorkloadError::Config(format!("{}: phase {i} stride is zero", params.name)));
                }
                let offsets = (0..stride)
                    .flat_map(|r| (first + r..last).step_by(stride as usize))
                    .map(|l| l * line)
                    .collect();
                Instruction::TouchLines {
                    region: p.region.clone(),
                    offsets,
                    write: p.write,
                }
            }
            Pattern::Shuffled { seed } => {
                let mut offsets: Vec<u64> = (first..last).map(|l| l * line).collect();
                offsets.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                Instruction::TouchLines {
                    region: p.region.clone(),
                    offsets,
                    write: p.write,
                }
            }
        };
        body.push(Instruction::Loop {
            count: p.passes,
            body: vec![sweep],
        });
    }
    Ok(Program::new(&params.name, body))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> CacheGeometry {
        CacheGeometry::default()
    }

    #[test]
    fn synth_shape() {
        let p = build_benchmark(&Benchmark::Synth { buffer: 512 * KB, iterations: 1 }, &geom()).unwrap();
        assert!(p.body.contains(&Instruction::alloc(ANON, 1 << 20, false)));
        let Some(Instruction::Loop { count: 1, body }) = p.body.last() else {
            panic!("missing loop");
        };
        assert_eq!(
            body,
            &vec![
                Instruction::write(ANON, 0, 512 * KB),
                Instruction::read(ANON, 0, 512 * KB),
                Instruction::write(ANON, 512 * KB, 512 * KB),
                Instruction::read(ANON, 512 * KB, 512 * KB),
            ]
        );
        // 4 passes of 8192 lines plus the 56 KB prologue
        assert_eq!(p.access_count(64), 4 * 8192 + 56 * 16);
    }

    #[test]
    fn synth_step_signals_after_each_subpass() {
        let p = build_benchmark(&Benchmark::SynthStep { buffer: 4096, iterations: 3 }, &geom()).unwrap();
        let Some(Instruction::Loop { body, .. }) = p.body.last() else {
            panic!()
        };
        assert_eq!(body.iter().filter(|i| **i == Instruction::SignalTrigger).count(), 4);
    }

    #[test]
    fn bomb_exceeds_cache() {
        let size = 2560 * KB;
        let p = build_benchmark(&Benchmark::Bomb { size, passes: 2 }, &geom()).unwrap();
        assert!(size > geom().total_size());
        assert_eq!(p.access_count(64), 2 * size / 64);
    }

    #[test]
    fn repl_touches_set0_lines() {
        let g = geom();
        let p = build_benchmark(&Benchmark::Repl { iterations: 3, signal: true }, &g).unwrap();
        assert_eq!(p.body[0], Instruction::alloc(REPL_REGION, 2 << 20, true));
        assert_eq!(p.body.last(), Some(&Instruction::SignalTrigger));
        assert_eq!(p.access_count(64), 48);
        let offs = set0_offsets(&g);
        assert_eq!(offs[1], 128 * KB);
        assert!(offs.iter().all(|&o| g.set_of(o) == 0));

        let step = build_benchmark(&Benchmark::ReplStep, &g).unwrap();
        let signals = step.body.iter().filter(|i| **i == Instruction::SignalTrigger).count();
        assert_eq!(signals, 17);
    }

    #[test]
    fn presets_build() {
        for name in VISION_PRESETS {
            let p = build_benchmark(&Benchmark::Vision(vision_preset(name).unwrap()), &geom()).unwrap();
            assert!(p.access_count(64) > 1_000_000, "{name}");
        }
        assert!(vision_preset("stitch").is_err());
    }

    #[test]
    fn strided_and_shuffled_cover_span_once() {
        let params = VisionParams {
            name: "v".into(),
            regions: vec![region("heap", 64 * 100)],
            phases: vec![
                phase("heap", 0.0, 1.0, Pattern::Strided { stride: 7 }, 1, false),
                phase("heap", 0.5, 1.0, Pattern::Shuffled { seed: 1 }, 1, false),
            ],
        };
        let p = build_benchmark(&Benchmark::Vision(params), &geom()).unwrap();
        let touches: Vec<&Vec<u64>> = p
            .body
            .iter()
            .filter_map(|i| match i {
                Instruction::Loop { body, .. } => match &body[0] {
                    Instruction::TouchLines { offsets, .. } => Some(offsets),
                    _ => None,
                },
                _ => None,
            })
            .collect();
        let mut a = touches[0].clone();
        a.sort_unstable();
        assert_eq!(a, (0..100).map(|l| l * 64).collect::<Vec<_>>());
        let mut b = touches[1].clone();
        assert_ne!(&b, &(50..100).map(|l| l * 64).collect::<Vec<_>>());
        b.sort_unstable();
        assert_eq!(b, (50..100).map(|l| l * 64).collect::<Vec<_>>());
    }

    #[test]
    fn invalid_params() {
        assert!(build_benchmark(&Benchmark::Synth { buffer: 100, iterations: 1 }, &geom()).is_err());
        assert!(build_benchmark(&Benchmark::Bomb { size: 0, passes: 1 }, &geom()).is_err());
        let mut v = vision_preset("track").unwrap();
        v.phases[0].to = 1.5;
        assert!(build_benchmark(&Benchmark::Vision(v), &geom()).is_err());
    }
}
