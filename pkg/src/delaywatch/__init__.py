"""Golden-IC-free hardware Trojan screening on virtual silicon.

Fabricates lots of virtual dies from synthetic gate-level designs, measures
path delays by simulated clock-frequency sweeping, trains a process-drift
watchdog regressor on 48-entry path descriptors, and classifies timing
paths as Trojan-infested or benign without any golden reference chip.
"""

__version__ = "0.1.0"

from .errors import DelaywatchError  # noqa: F401
