//! Deterministic simulator of a single GPU threadgroup.
//!
//! A [`ThreadgroupProgram`] is a list of phases separated by barriers. Every
//! thread `id` in `[0, N)` runs every phase exactly once, and no thread
//! starts phase `k + 1` before all threads have finished phase `k`.
//!
//! Within a phase, threads read the buffer state as it stood at the previous
//! barrier and emit [`WriteRecord`]s. Writes are applied at the barrier in
//! ascending thread order, so a phase in which no two threads touch the same
//! location produces the same result no matter how threads are distributed
//! over workers. [`check_races`] certifies that property for a concrete
//! launch.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Barrier, Mutex, RwLock};

use thiserror::Error;

use crate::numerics::Grid2D;

/// Index of a buffer declared on a [`ThreadgroupProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BufferId(usize);

/// One pending store produced by a thread during a phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WriteRecord {
    pub buffer: BufferId,
    pub index: usize,
    pub value: f32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Fault {
    #[error("phase {phase} thread {thread}: index {index} out of bounds for buffer `{buffer}` (len {len})")]
    OutOfBounds {
        buffer: String,
        phase: usize,
        thread: usize,
        index: usize,
        len: usize,
    },
    #[error("buffer `{0}` was declared by the program but not supplied")]
    MissingBuffer(String),
    #[error("phase {phase} thread {thread}: assertion failed: {message}")]
    Assertion {
        phase: usize,
        thread: usize,
        message: String,
    },
}

type PhaseFn = dyn Fn(&mut ThreadView<'_>) -> Result<(), Fault> + Send + Sync;

struct Phase {
    label: String,
    run: Arc<PhaseFn>,
}

/// A kernel expressed as barrier-separated phases over named shared buffers.
pub struct ThreadgroupProgram {
    name: String,
    thread_count: usize,
    buffers: Vec<String>,
    phases: Vec<Phase>,
}

impl fmt::Debug for ThreadgroupProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ThreadgroupProgram")
            .field("name", &self.name)
            .field("thread_count", &self.thread_count)
            .field("buffers", &self.buffers)
            .field(
                "phases",
                &self.phases.iter().map(|p| &p.label).collect::<Vec<_>>(),
            )
            .finish()
    }
}

impl ThreadgroupProgram {
    /// # Panics
    /// If `thread_count` is zero.
    pub fn new(name: impl Into<String>, thread_count: usize) -> Self {
        assert!(thread_count > 0, "a threadgroup needs at least one thread");
        Self {
            name: name.into(),
            thread_count,
            buffers: Vec::new(),
            phases: Vec::new(),
        }
    }

    /// Declares (or looks up) a shared buffer by name.
    pub fn buffer(&mut self, name: &str) -> BufferId {
        if let Some(pos) = self.buffers.iter().position(|b| b == name) {
            return BufferId(pos);
        }
        self.buffers.push(name.to_owned());
        BufferId(self.buffers.len() - 1)
    }

    /// Appends a phase. A barrier separates it from the previous one.
    pub fn phase<F>(&mut self, label: impl Into<String>, f: F) -> &mut Self
    where
        F: Fn(&mut ThreadView<'_>) -> Result<(), Fault> + Send + Sync + 'static,
    {
        self.phases.push(Phase {
            label: label.into(),
            run: Arc::new(f),
        });
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn thread_count(&self) -> usize {
        self.thread_count
    }

    pub fn phase_count(&self) -> usize {
        self.phases.len()
    }

    pub fn phase_labels(&self) -> impl Iterator<Item = &str> {
        self.phases.iter().map(|p| p.label.as_str())
    }

    pub fn buffer_names(&self) -> &[String] {
        &self.buffers
    }

    fn buffer_name(&self, id: BufferId) -> &str {
        &self.buffers[id.0]
    }

    /// Moves the declared buffers out of `set` into declaration order.
    fn bind(&self, set: &mut BufferSet) -> Result<Vec<Grid2D>, Fault> {
        if let Some(missing) = self.buffers.iter().find(|b| !set.contains(b)) {
            return Err(Fault::MissingBuffer(missing.clone()));
        }
        Ok(self
            .buffers
            .iter()
            .map(|b| set.take(b).expect("presence checked above"))
            .collect())
    }

    fn unbind(&self, bound: Vec<Grid2D>, set: &mut BufferSet) {
        for (name, grid) in self.buffers.iter().zip(bound) {
            set.insert(name.clone(), grid);
        }
    }
}

/// Named collection of grids handed to and returned from [`run`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BufferSet {
    grids: BTreeMap<String, Grid2D>,
}

impl BufferSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, grid: Grid2D) -> Self {
        self.insert(name, grid);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, grid: Grid2D) -> Option<Grid2D> {
        self.grids.insert(name.into(), grid)
    }

    pub fn get(&self, name: &str) -> Option<&Grid2D> {
        self.grids.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Grid2D> {
        self.grids.get_mut(name)
    }

    pub fn take(&mut self, name: &str) -> Option<Grid2D> {
        self.grids.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.grids.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Grid2D)> {
        self.grids.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Grid2D)> {
        self.grids.iter_mut().map(|(k, v)| (k.as_str(), v))
    }
}

/// What a single thread sees while running one phase: its id, the buffer
/// snapshot from the last barrier, and a sink for its writes.
pub struct ThreadView<'a> {
    id: usize,
    phase: usize,
    program: &'a ThreadgroupProgram,
    buffers: &'a [Grid2D],
    writes: &'a mut Vec<WriteRecord>,
    reads: Option<&'a mut Vec<(BufferId, usize)>>,
}

impl ThreadView<'_> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn thread_count(&self) -> usize {
        self.program.thread_count
    }

    fn check(&self, buffer: BufferId, index: usize) -> Result<(), Fault> {
        let len = self.buffers[buffer.0].len();
        if index >= len {
            return Err(Fault::OutOfBounds {
                buffer: self.program.buffer_name(buffer).to_owned(),
                phase: self.phase,
                thread: self.id,
                index,
                len,
            });
        }
        Ok(())
    }

    /// Real part of `buffer[index]` as of the last barrier.
    pub fn read(&mut self, buffer: BufferId, index: usize) -> Result<f32, Fault> {
        self.check(buffer, index)?;
        if let Some(log) = self.reads.as_deref_mut() {
            log.push((buffer, index));
        }
        Ok(self.buffers[buffer.0].elements()[index].real)
    }

    /// Stores `value` into the real part of `buffer[index]` at the next barrier.
    pub fn write(&mut self, buffer: BufferId, index: usize, value: f32) -> Result<(), Fault> {
        self.check(buffer, index)?;
        self.writes.push(WriteRecord {
            buffer,
            index,
            value,
        });
        Ok(())
    }

    pub fn assert(&self, cond: bool, message: impl FnOnce() -> String) -> Result<(), Fault> {
        if cond {
            Ok(())
        } else {
            Err(Fault::Assertion {
                phase: self.phase,
                thread: self.id,
                message: message(),
            })
        }
    }
}

fn apply(buffers: &mut [Grid2D], writes: &[WriteRecord]) {
    for w in writes {
        buffers[w.buffer.0].elements_mut()[w.index].real = w.value;
    }
}

/// Runs `threads` of one phase in ascending id order, appending their writes.
/// Stops at the first faulting thread.
fn run_threads(
    program: &ThreadgroupProgram,
    phase: usize,
    threads: std::ops::Range<usize>,
    buffers: &[Grid2D],
    writes: &mut Vec<WriteRecord>,
) -> Result<(), Fault> {
    let f = &program.phases[phase].run;
    for id in threads {
        let mut view = ThreadView {
            id,
            phase,
            program,
            buffers,
            writes: &mut *writes,
            reads: None,
        };
        f(&mut view)?;
    }
    Ok(())
}

/// Static partition of `[0, n)` into `workers` contiguous chunks.
fn partition(n: usize, workers: usize) -> Vec<std::ops::Range<usize>> {
    let base = n / workers;
    let extra = n % workers;
    let mut start = 0;
    (0..workers)
        .map(|w| {
            let len = base + usize::from(w < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Executes `program` over `buffers` using up to `workers` OS threads.
///
/// The returned set contains every buffer that was passed in. For programs
/// that [`check_races`] certifies, the result is bit-identical for every
/// worker count.
pub fn run(
    program: &ThreadgroupProgram,
    mut buffers: BufferSet,
    workers: usize,
) -> Result<BufferSet, Fault> {
    let mut bound = program.bind(&mut buffers)?;
    let workers = workers.clamp(1, program.thread_count);
    let outcome = if workers == 1 {
        run_sequential(program, &mut bound)
    } else {
        run_parallel(program, &mut bound, workers)
    };
    program.unbind(bound, &mut buffers);
    outcome.map(|()| buffers)
}

fn run_sequential(program: &ThreadgroupProgram, bound: &mut [Grid2D]) -> Result<(), Fault> {
    let mut writes = Vec::new();
    for phase in 0..program.phases.len() {
        writes.clear();
        run_threads(program, phase, 0..program.thread_count, bound, &mut writes)?;
        apply(bound, &writes);
    }
    Ok(())
}

fn run_parallel(
    program: &ThreadgroupProgram,
    bound: &mut Vec<Grid2D>,
    workers: usize,
) -> Result<(), Fault> {
    let chunks = partition(program.thread_count, workers);
    let state = RwLock::new(std::mem::take(bound));
    let slots: Vec<Mutex<Result<Vec<WriteRecord>, Fault>>> =
        (0..workers).map(|_| Mutex::new(Ok(Vec::new()))).collect();
    let barrier = Barrier::new(workers);
    let failure: Mutex<Option<Fault>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for (w, chunk) in chunks.iter().enumerate() {
            let (state, slots, barrier, failure) = (&state, &slots, &barrier, &failure);
            let chunk = chunk.clone();
            scope.spawn(move || {
                let mut writes = Vec::new();
                for phase in 0..program.phases.len() {
                    {
                        let snapshot = state.read().expect("buffer lock poisoned");
                        writes.clear();
                        let res =
                            run_threads(program, phase, chunk.clone(), &snapshot, &mut writes);
                        let mut slot = slots[w].lock().expect("slot lock poisoned");
                        match res {
                            Ok(()) => {
                                let out = slot.as_mut().expect("slot reset after failure");
                                out.clear();
                                out.extend_from_slice(&writes);
                            }
                            Err(fault) => *slot = Err(fault),
                        }
                    }
                    // all threads have finished this phase
                    barrier.wait();
                    if w == 0 {
                        let mut state = state.write().expect("buffer lock poisoned");
                        // chunks are in id order, so the first fault found is
                        // the lowest faulting thread, as in a sequential run
                        let mut fault = None;
                        for slot in slots.iter() {
                            if let Err(f) = &*slot.lock().expect("slot lock poisoned") {
                                fault = Some(f.clone());
                                break;
                            }
                        }
                        match fault {
                            Some(f) => *failure.lock().expect("failure lock poisoned") = Some(f),
                            None => {
                                for slot in slots.iter() {
                                    let slot = slot.lock().expect("slot lock poisoned");
                                    apply(&mut state, slot.as_ref().expect("checked above"));
                                }
                            }
                        }
                    }
                    // writes applied; next phase may read
                    barrier.wait();
                    if failure.lock().expect("failure lock poisoned").is_some() {
                        break;
                    }
                }
            });
        }
    });

    *bound = state.into_inner().expect("buffer lock poisoned");
    match failure.into_inner().expect("failure lock poisoned") {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

/// A location touched by more than one thread within a single phase, with
/// at least one of the accesses being a write.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RaceConflict {
    /// Zero-based phase index.
    pub phase: usize,
    pub phase_label: String,
    pub buffer: String,
    pub index: usize,
    /// Threads that wrote the location.
    pub writers: Vec<usize>,
    /// Threads that read the location.
    pub readers: Vec<usize>,
}

#[derive(Default)]
struct Access {
    writers: Vec<usize>,
    readers: Vec<usize>,
}

fn push_unique(list: &mut Vec<usize>, id: usize) {
    if list.last() != Some(&id) {
        list.push(id);
    }
}

/// Runs `program` sequentially while recording every read and write, and
/// reports each location that two different threads touch in the same phase
/// where at least one of them writes it.
pub fn check_races(
    program: &ThreadgroupProgram,
    mut buffers: BufferSet,
) -> Result<Vec<RaceConflict>, Fault> {
    let mut bound = program.bind(&mut buffers)?;
    let mut conflicts = Vec::new();
    let mut writes = Vec::new();
    let mut reads = Vec::new();
    for phase in 0..program.phases.len() {
        writes.clear();
        let mut access: HashMap<(BufferId, usize), Access> = HashMap::new();
        let f = &program.phases[phase].run;
        for id in 0..program.thread_count {
            let first_write = writes.len();
            reads.clear();
            let mut view = ThreadView {
                id,
                phase,
                program,
                buffers: &bound,
                writes: &mut writes,
                reads: Some(&mut reads),
            };
            f(&mut view)?;
            for w in &writes[first_write..] {
                push_unique(
                    &mut access.entry((w.buffer, w.index)).or_default().writers,
                    id,
                );
            }
            for &(b, i) in &reads {
                push_unique(&mut access.entry((b, i)).or_default().readers, id);
            }
        }
        let mut found: Vec<_> = access
            .into_iter()
            .filter(|(_, a)| {
                !a.writers.is_empty()
                    && (a.writers.len() > 1 || a.readers.iter().any(|r| *r != a.writers[0]))
            })
            .collect();
        found.sort_by_key(|((b, i), _)| (*b, *i));
        conflicts.extend(found.into_iter().map(|((b, index), a)| RaceConflict {
            phase,
            phase_label: program.phases[phase].label.clone(),
            buffer: program.buffer_name(b).to_owned(),
            index,
            writers: a.writers,
            readers: a.readers,
        }));
        apply(&mut bound, &writes);
    }
    Ok(conflicts)
}
