//! Discrete-event quantum network workbench.
//!
//! Build a topology of quantum routers joined by heralded links, attach
//! hardware templates, lay it out for display, and run random-request
//! traffic through a picosecond-resolution event kernel. Everything is also
//! reachable over HTTP ([`service`]) and from the `qnet` command line.

pub mod hardware;
pub mod layout;
pub mod randreq;
pub mod serialization;
pub mod service;
pub mod simkernel;
pub mod templates;
pub mod topology;

pub use hardware::Picos;
pub use layout::{compute_layout, LayoutParams, LayoutResult};
pub use randreq::{run_simulation, SimulationConfig, SimulationReport};
pub use templates::{Template, TemplateStore};
pub use topology::{NodeType, Topology};
