//! Deterministic simulator of a CPU-GPU unified physical memory APU.
//!
//! The model is built from mechanisms: a buddy frame allocator with
//! first-touch placement policies, dual page tables with PTE fragments, a
//! fragment-aware GPU TLB, channel interleaving feeding an Infinity Cache
//! model, saturating page-fault servers, and a contention model for atomics.
//! Calibrated parameters live in [`machine::MachineProfile`].

pub mod atomics;
pub mod fault;
pub mod harness;
pub mod machine;
pub mod memmgr;
pub mod pagetable;
pub mod perf;
pub mod tlb;

mod error;

pub use error::{Error, Result};
pub use machine::{builtin_mi300a, MachineProfile};

/// Which side of the APU issues an access.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Agent {
    Cpu,
    Gpu,
}

impl Agent {
    pub fn name(self) -> &'static str {
        match self {
            Agent::Cpu => "cpu",
            Agent::Gpu => "gpu",
        }
    }
}

impl std::fmt::Display for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Agent {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cpu" => Ok(Agent::Cpu),
            "gpu" => Ok(Agent::Gpu),
            _ => Err(format!("unknown agent `{s}`")),
        }
    }
}
