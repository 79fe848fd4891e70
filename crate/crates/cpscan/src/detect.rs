//! CSV ingestion, standardization, and the detection report.
