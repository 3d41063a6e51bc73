//! Library side of the `mvpb` command-line tool: dataset ingestion, method
//! flags and result reporting.

pub mod ingest;
pub mod options;
pub mod report;

pub use ingest::{ingest, ingest_reader, write_dataset, ColumnMap, EffectScale, IngestError, IngestSpec, Ingested, Rule};
pub use options::MethodArgs;
pub use report::{select_variants, Combine, MethodChoice};

/// Process exit codes.
pub mod exit {
    pub const CONFIG: u8 = 2;
    pub const INGEST: u8 = 3;
    pub const COMPUTE: u8 = 4;
}
