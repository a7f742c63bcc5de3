"""Run the test suite under coverage and refresh the coverage badge

Requires pytest, coverage and anybadge. Pass --slow to include the
long multi-start sweeps.
"""

import pathlib
import shlex
import subprocess
import sys
import xml.etree.ElementTree as ET


def total_coverage(report="coverage.xml"):
    """Line coverage in percent from a Cobertura report"""

    root = ET.parse(report).getroot()
    return round(100 * float(root.get("line-rate", 0)), 1)


if __name__ == "__main__":

    marker = "" if "--slow" in sys.argv[1:] else ' -m "not slow"'
    test_command_list = [
        f"coverage run --source=relukit -m pytest{marker}",
        "coverage xml",
        ]

    for command in test_command_list:
        completed = subprocess.run(shlex.split(command))
        if completed.returncode != 0:
            sys.exit(completed.returncode)

    coverage_value = total_coverage()
    pathlib.Path("badges").mkdir(exist_ok=True)
    print(f"total coverage: {coverage_value}%")

    gen_badge_command = (
        f"anybadge --value={coverage_value} --suffix=% "
        f"--file=badges/coverage.svg --overwrite "
        f"--label=coverage 60=red 80=orange 100=green"
    )
    subprocess.run(shlex.split(gen_badge_command))
