"""Workloads: distributed sort, k-means clustering, and the LLPR harness."""

from .bench import bench_kmeans, bench_llpr, bench_terasort, run_sim, sim_reports
from .kmeans import (
    KMeansModel,
    gen_points,
    kmeans_reference,
    kmeans_run,
    upload_points,
)
from .llpr import LlprReport, llpr, llpr_harness, llpr_sweep, measure_throughput
from .report import COLUMNS, KMEANS_COLUMNS, LLPR_COLUMNS, TERASORT_COLUMNS, csv_text, write_csv
from .terasort import (
    RECORD_SIZE,
    TERA,
    VerifyReport,
    gen_records,
    keyspace_checksum,
    teragen,
    terasort,
    verify_records,
    verify_sorted,
)

__all__ = [
    "COLUMNS", "KMEANS_COLUMNS", "KMeansModel", "LLPR_COLUMNS", "LlprReport", "RECORD_SIZE",
    "TERA", "TERASORT_COLUMNS", "VerifyReport", "bench_kmeans", "bench_llpr", "bench_terasort",
    "csv_text", "gen_points", "gen_records", "keyspace_checksum", "kmeans_reference",
    "kmeans_run", "llpr", "llpr_harness", "llpr_sweep", "measure_throughput", "run_sim", "sim_reports",
    "teragen", "terasort", "upload_points", "verify_records", "verify_sorted", "write_csv",
]
