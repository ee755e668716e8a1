"""Shared pytest wiring: one printed pass/fail line per acceptance criterion."""

ACCEPTANCE_FILE = "test_acceptance.py"

CRITERIA = {
    "test_ir_metric_oracle_equivalence": "IR-metric oracle equivalence",
    "test_search_exactness": "search exactness",
    "test_clustering_properties": "clustering properties",
    "test_end_to_end_deterministic_pipeline": "end-to-end deterministic pipeline",
    "test_budget_and_atomicity_laws": "budget and atomicity laws",
    "test_metrics_arithmetic": "metrics arithmetic",
    "test_correctness_preservation": "correctness preservation",
}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes: dict[str, str] = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            if ACCEPTANCE_FILE not in report.nodeid:
                continue
            name = report.nodeid.split("::")[-1]
            if name not in CRITERIA:
                continue
            if report.when == "call" and report.passed:
                outcomes.setdefault(name, "PASS")
            elif report.failed:
                outcomes[name] = "FAIL"
    if not outcomes:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for name, label in CRITERIA.items():
        if name in outcomes:
            terminalreporter.write_line(f"  {label}: {outcomes[name]}")
