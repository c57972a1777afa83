//! Instance files, solution files, random-instance generators, and the
//! benchmark harness.

mod bench;
mod format;
mod generate;

pub use bench::{
    run_benchmark, BenchOptions, BenchRow, BenchSolver, BenchmarkReport, SolverAggregate,
};
pub use format::{
    parse_instance, parse_solution, read_instance_file, read_solution_file, write_instance,
    write_instance_file, write_solution, write_solution_file, Instance,
};
pub use generate::{generate_belgian_style, generate_gaslib_style};
