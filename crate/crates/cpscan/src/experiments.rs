//! Seeded batch jobs emitting CSV.
