use std::collections::BTreeMap;

use super::WorkloadError;
use crate::vm::standard_layout;

/// One step of a synthetic process. Offsets and lengths are in bytes,
/// relative to the start of the named region; every line overlapped by a
/// range is accessed exactly once, in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instruction {
    AllocRegion { name: String, size: u64, huge: bool },
    WriteRange { region: String, start: u64, len: u64 },
    ReadRange { region: String, start: u64, len: u64 },
    TouchLines { region: String, offsets: Vec<u64>, write: bool },
    Loop { count: u64, body: Vec<Instruction> },
    /// Asks the trigger for a snapshot (event-mode activation).
    SignalTrigger,
}

impl Instruction {
    pub fn read(region: &str, start: u64, len: u64) -> Self {
        Self::ReadRange {
            region: region.into(),
            start,
            len,
        }
    }

    pub fn write(region: &str, start: u64, len: u64) -> Self {
        Self::WriteRange {
            region: region.into(),
            start,
            len,
        }
    }

    pub fn touch(region: &str, offsets: Vec<u64>) -> Self {
        Self::TouchLines {
            region: region.into(),
            offsets,
            write: false,
        }
    }

    pub fn alloc(name: &str, size: u64, huge: bool) -> Self {
        Self::AllocRegion {
            name: name.into(),
            size,
            huge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub name: String,
    pub body: Vec<Instruction>,
}

fn range_lines(start: u64, len: u64, line_size: u64) -> u64 {
    let first = start / line_size;
    let last = (start + len).div_ceil(line_size);
    last - first
}

impl Program {
    pub fn new(name: &str, body: Vec<Instruction>) -> Self {
        Self {
            name: name.to_string(),
            body,
        }
    }

    /// A program that does nothing.
    pub fn idle() -> Self {
        Self::new("idle", Vec::new())
    }

    /// Checks region references, bounds and lengths against the regions the
    /// program allocates plus the standard text/glibc/stack layout.
    pub fn validate(&self, line_size: u64) -> Result<(), WorkloadError> {
        let mut sizes: BTreeMap<String, u64> =
            standard_layout().into_iter().map(|v| (v.name.clone(), v.len())).collect();
        validate_block(&self.body, &mut sizes, false, line_size)
    }

    /// Number of cache accesses the program performs, saturating at `u64::MAX`.
    pub fn access_count(&self, line_size: u64) -> u64 {
        count_block(&self.body, line_size)
    }

    /// Number of trigger signals the program raises, saturating at `u64::MAX`.
    pub fn signal_count(&self) -> u64 {
        signals_in(&self.body)
    }

    /// Top-level allocations followed by the remaining body repeated forever.
    pub fn repeat_forever(&self) -> Self {
        let (allocs, rest): (Vec<_>, Vec<_>) = self
            .body
            .iter()
            .cloned()
            .partition(|i| matches!(i, Instruction::AllocRegion { .. }));
        let mut body = allocs;
        if !rest.is_empty() {
            body.push(Instruction::Loop {
                count: u64::MAX,
                body: rest,
            });
        }
        Self::new(&self.name, body)
    }

    pub(crate) fn compile(&self, line_size: u64) -> Result<Compiled, WorkloadError> {
        self.validate(line_size)?;
        let mut out = Compiled {
            ops: Vec::new(),
            regions: standard_layout().into_iter().map(|v| v.name).collect(),
        };
        compile_block(&self.body, &mut out, line_size);
        Ok(out)
    }
}

fn validate_block(
    block: &[Instruction],
    sizes: &mut BTreeMap<String, u64>,
    repeating: bool,
    line_size: u64,
) -> Result<(), WorkloadError> {
    let check = |sizes: &BTreeMap<String, u64>, region: &str, start: u64, len: u64| {
        let size = *sizes
            .get(region)
            .ok_or_else(|| WorkloadError::Program(format!("region {region:?} used before allocation")))?;
        if len == 0 {
            return Err(WorkloadError::Program(format!("zero-length range on {region:?}")));
        }
        match start.checked_add(len) {
            Some(end) if end <= size => Ok(()),
            _ => Err(WorkloadError::Program(format!(
                "range {start:#x}+{len:#x} exceeds {region:?} ({size:#x} bytes)"
            ))),
        }
    };
    for ins in block {
        match ins {
            Instruction::AllocRegion { name, size, .. } => {
                if repeating {
                    return Err(WorkloadError::Program(format!(
                        "allocation of {name:?} inside a repeating loop"
                    )));
                }
                if *size == 0 || size % line_size != 0 {
                    return Err(WorkloadError::Program(format!(
                        "region {name:?} size must be a positive multiple of the line size"
                    )));
                }
                if sizes.insert(name.clone(), *size).is_some() {
                    return Err(WorkloadError::Program(format!("region {name:?} allocated twice")));
                }
            }
            Instruction::WriteRange { region, start, len } | Instruction::ReadRange { region, start, len } => {
                check(sizes, region, *start, *len)?;
            }
            Instruction::TouchLines { region, offsets, .. } => {
                if offsets.is_empty() {
                    return Err(WorkloadError::Program(format!("empty touch list on {region:?}")));
                }
                for &off in offsets {
                    check(sizes, region, off, 1)?;
                }
            }
            Instruction::Loop { count, body } => {
                validate_block(body, sizes, repeating || *count > 1, line_size)?;
            }
            Instruction::SignalTrigger => {}
        }
    }
    Ok(())
}

fn count_block(block: &[Instruction], line_size: u64) -> u64 {
    block.iter().fold(0u64, |acc, ins| {
        let n = match ins {
            Instruction::AllocRegion { .. } | Instruction::SignalTrigger => 0,
            Instruction::WriteRange { start, len, .. } | Instruction::ReadRange { start, len, .. } => {
                range_lines(*start, *len, line_size)
            }
            Instruction::TouchLines { offsets, .. } => offsets.len() as u64,
            Instruction::Loop { count, body } => count.saturating_mul(count_block(body, line_size)),
        };
        acc.saturating_add(n)
    })
}

fn signals_in(block: &[Instruction]) -> u64 {
    block.iter().fold(0u64, |acc, ins| {
        let n = match ins {
            Instruction::SignalTrigger => 1,
            Instruction::Loop { count, body } => count.saturating_mul(signals_in(body)),
            _ => 0,
        };
        acc.saturating_add(n)
    })
}

/// Flat form of a program: loops become begin/end markers and region names
/// become indices.
#[derive(Debug, Clone)]
pub(crate) struct Compiled {
    pub ops: Vec<Op>,
    pub regions: Vec<String>,
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Alloc { region: usize, size: u64, huge: bool },
    Range { region: usize, first_line: u64, lines: u64, write: bool },
    Touch { region: usize, offsets: Vec<u64>, write: bool },
    Signal,
    LoopBegin { count: u64, end: usize },
    LoopEnd { begin: usize },
}

impl Compiled {
    fn region(&mut self, name: &str) -> usize {
        match self.regions.iter().position(|r| r == name) {
            Some(i) => i,
            None => {
                self.regions.push(name.to_string());
                self.regions.len() - 1
            }
        }
    }
}

fn compile_block(block: &[Instruction], out: &mut Compiled, line_size: u64) {
    for ins in block {
        match ins {
            Instruction::AllocRegion { name, size, huge } => {
                let region = out.region(name);
                out.ops.push(Op::Alloc {
                    region,
                    size: *size,
                    huge: *huge,
                });
            }
            Instruction::WriteRange { region, start, len } | Instruction::ReadRange { region, start, len } => {
                let region_idx = out.region(region);
                out.ops.push(Op::Range {
                    region: region_idx,
                    first_line: start / line_size,
                    lines: range_lines(*start, *len, line_size),
                    write: matches!(ins, Instruction::WriteRange { .. }),
                });
            }
            Instruction::TouchLines { region, offsets, write } => {
                let region = out.region(region);
                out.ops.push(Op::Touch {
                    region,
                    offsets: offsets.clone(),
                    write: *write,
                });
            }
            Instruction::Loop { count, body } => {
                let begin = out.ops.len();
                out.ops.push(Op::LoopBegin { count: *count, end: 0 });
                compile_block(body, out, line_size);
                let end = out.ops.len();
                out.ops.push(Op::LoopEnd { begin });
                out.ops[begin] = Op::LoopBegin { count: *count, end };
            }
            Instruction::SignalTrigger => out.ops.push(Op::Signal),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Step {
    Access { region: usize, offset: u64, write: bool },
    Alloc { region: usize, size: u64, huge: bool },
    Signal,
    Done,
}

/// Execution position inside a [`Compiled`] program.
#[derive(Debug, Clone, Default)]
pub(crate) struct Cursor {
    pc: usize,
    loops: Vec<u64>,
    inner: u64,
}

impl Cursor {
    pub(crate) fn next(&mut self, prog: &Compiled, line_size: u64) -> Step {
        loop {
            let Some(op) = prog.ops.get(self.pc) else {
                return Step::Done;
            };
            match op {
                Op::Alloc { region, size, huge } => {
                    self.pc += 1;
                    return Step::Alloc {
                        region: *region,
                        size: *size,
                        huge: *huge,
                    };
                }
                Op::Range {
                    region,
                    first_line,
                    lines,
                    write,
                } => {
                    if self.inner < *lines {
                        let offset = (first_line + self.inner) * line_size;
                        self.inner += 1;
                        return Step::Access {
                            region: *region,
                            offset,
                            write: *write,
                        };
                    }
                    self.inner = 0;
                    self.pc += 1;
                }
                Op::Touch { region, offsets, write } => {
                    if let Some(&offset) = offsets.get(self.inner as usize) {
                        self.inner += 1;
                        return Step::Access {
                            region: *region,
                            offset,
                            write: *write,
                        };
                    }
                    self.inner = 0;
                    self.pc += 1;
                }
                Op::Signal => {
                    self.pc += 1;
                    return Step::Signal;
                }
                Op::LoopBegin { count, end } => {
                    if *count == 0 {
                        self.pc = end + 1;
                    } else {
                        self.loops.push(*count);
                        self.pc += 1;
                    }
                }
                Op::LoopEnd { begin } => {
                    let remaining = self.loops.last_mut().expect("unbalanced loop");
                    *remaining -= 1;
                    if *remaining == 0 {
                        self.loops.pop();
                        self.pc += 1;
                    } else {
                        self.pc = begin + 1;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expand(p: &Program) -> Vec<Step> {
        let c = p.compile(64).unwrap();
        let mut cur = Cursor::default();
        let mut out = Vec::new();
        loop {
            match cur.next(&c, 64) {
                Step::Done => return out,
                s => out.push(s),
            }
        }
    }

    #[test]
    fn nested_loops_expand_in_order() {
        let p = Program::new(
            "t",
            vec![
                Instruction::alloc("a", 256, false),
                Instruction::Loop {
                    count: 2,
                    body: vec![
                        Instruction::read("a", 0, 128),
                        Instruction::Loop {
                            count: 0,
                            body: vec![Instruction::read("a", 0, 64)],
                        },
                        Instruction::SignalTrigger,
                    ],
                },
            ],
        );
        let steps = expand(&p);
        let accesses: Vec<u64> = steps
            .iter()
            .filter_map(|s| match s {
                Step::Access { offset, .. } => Some(*offset),
                _ => None,
            })
            .collect();
        assert_eq!(accesses, vec![0, 64, 0, 64]);
        assert_eq!(steps.iter().filter(|s| **s == Step::Signal).count(), 2);
        assert_eq!(p.access_count(64), 4);
    }

    #[test]
    fn unaligned_range_covers_overlapped_lines() {
        let p = Program::new("t", vec![Instruction::alloc("a", 4096, false), Instruction::write("a", 60, 10)]);
        assert_eq!(p.access_count(64), 2);
        assert_eq!(expand(&p).len(), 3);
    }

    #[test]
    fn validation_errors() {
        let bad = [
            vec![Instruction::read("nope", 0, 64)],
            vec![Instruction::alloc("a", 64, false), Instruction::read("a", 0, 0)],
            vec![Instruction::alloc("a", 64, false), Instruction::read("a", 0, 128)],
            vec![Instruction::alloc("a", 100, false)],
            vec![Instruction::alloc("a", 64, false), Instruction::alloc("a", 64, false)],
            vec![Instruction::Loop {
                count: 3,
                body: vec![Instruction::alloc("a", 64, false)],
            }],
            vec![Instruction::alloc("a", 64, false), Instruction::touch("a", vec![])],
        ];
        for body in bad {
            assert!(Program::new("x", body.clone()).validate(64).is_err(), "{body:?}");
        }
        let ok = Program::new("x", vec![Instruction::read("text", 0, 4096)]);
        assert!(ok.validate(64).is_ok());
    }

    #[test]
    fn repeat_forever_hoists_allocations() {
        let p = Program::new("b", vec![Instruction::alloc("a", 128, false), Instruction::read("a", 0, 128)]);
        let r = p.repeat_forever();
        r.validate(64).unwrap();
        assert_eq!(r.access_count(64), u64::MAX);
        let c = r.compile(64).unwrap();
        let mut cur = Cursor::default();
        let offsets: Vec<_> = (0..7).map(|_| cur.next(&c, 64)).collect();
        assert!(matches!(offsets[0], Step::Alloc { .. }));
        assert_eq!(offsets[4], Step::Access { region: 3, offset: 64, write: false });
    }

    #[test]
    fn signals_are_counted_through_loops() {
        let p = Program::new(
            "s",
            vec![
                Instruction::SignalTrigger,
                Instruction::Loop {
                    count: 3,
                    body: vec![Instruction::SignalTrigger, Instruction::SignalTrigger],
                },
            ],
        );
        assert_eq!(p.signal_count(), 7);
    }
}
