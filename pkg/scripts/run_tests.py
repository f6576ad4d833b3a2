#!/usr/bin/env python3
"""テスト実行スクリプト

使用例:
    python scripts/run_tests.py
    python scripts/run_tests.py --type unit
    python scripts/run_tests.py --type integration --no-coverage
    python scripts/run_tests.py --markers "not slow"
    python scripts/run_tests.py --type slow --threads 4
"""

import argparse
import os
from pathlib import Path
import subprocess
import sys
from typing import Dict, List, Optional, Tuple

PROJECT_ROOT = Path(__file__).parent.parent

# type → (対象パス, マーカー式)
SELECTIONS: Dict[str, Tuple[str, Optional[str]]] = {
    "unit": ("tests/", "not integration and not slow"),
    "integration": ("tests/integration/", "integration and not slow"),
    "slow": ("tests/", "slow"),
    "all": ("tests/", None),
}


def build_command(
    test_type: str,
    coverage: bool,
    markers: Optional[str],
    verbose: bool,
    parallel: bool,
) -> List[str]:
    """pytest コマンドを組み立てる（--markers は type のマーカー式と AND で結合）"""
    path, selection = SELECTIONS[test_type]
    cmd = [sys.executable, "-m", "pytest", path]

    expression = " and ".join(f"({m})" for m in (selection, markers) if m)
    if expression:
        cmd.extend(["-m", expression])
    cmd.append("-v" if verbose else "-q")

    if coverage:
        cmd.extend(["--cov=src", "--cov-report=term-missing", "--cov-report=html", "--cov-branch"])

    if parallel:
        try:
            import xdist  # noqa: F401
            cmd.extend(["-n", "auto"])
        except ImportError:
            print("⚠️  pytest-xdist not installed, running serially")
    return cmd


def run_tests(
    test_type: str = "all",
    coverage: bool = True,
    markers: Optional[str] = None,
    verbose: bool = True,
    parallel: bool = False,
    threads: int = 1,
) -> int:
    """テストを実行

    学習のテストはビット単位の再現性を前提にするため、torch のスレッド数と
    決定的アルゴリズムを環境変数で固定してから pytest を起動します。

    Returns:
        pytest の終了コード
    """
    cmd = build_command(test_type, coverage, markers, verbose, parallel)
    env = dict(os.environ)
    env.setdefault("DETERMINISTIC", "true")
    env["NUM_THREADS"] = str(threads)
    env.setdefault("LOG_LEVEL", "WARNING")

    print("=" * 60)
    print(f"  Algae detection tests: {test_type}")
    print("=" * 60)
    print(f"Running: {' '.join(cmd)}")
    print(f"NUM_THREADS={env['NUM_THREADS']}  DETERMINISTIC={env['DETERMINISTIC']}")
    print()

    try:
        result = subprocess.run(cmd, cwd=PROJECT_ROOT, env=env, check=False)
    except KeyboardInterrupt:
        print("\n⚠️  Tests interrupted by user")
        return 130

    print()
    if result.returncode == 0:
        print("✅ All selected tests passed")
        if coverage:
            print("   Coverage: htmlcov/index.html")
    elif result.returncode == 5:
        print("⚠️  No tests were collected for this selection")
    else:
        print(f"❌ pytest exited with {result.returncode}")
    return result.returncode


def main():
    parser = argparse.ArgumentParser(description="Run the algae detection test suites")
    parser.add_argument("--type", choices=sorted(SELECTIONS), default="all", help="Suite to run (default: all)")
    parser.add_argument("--no-coverage", action="store_true", help="Disable coverage reporting")
    parser.add_argument("--markers", type=str, help="Extra marker expression, ANDed with --type")
    parser.add_argument("--quiet", action="store_true", help="Reduce output verbosity")
    parser.add_argument("--parallel", action="store_true", help="Run tests in parallel (requires pytest-xdist)")
    parser.add_argument("--threads", type=int, default=1, help="torch threads per test process")
    args = parser.parse_args()

    sys.exit(run_tests(
        test_type=args.type,
        coverage=not args.no_coverage,
        markers=args.markers,
        verbose=not args.quiet,
        parallel=args.parallel,
        threads=args.threads,
    ))


if __name__ == "__main__":
    main()
