import sys
from pathlib import Path

from hypothesis import settings

# allow running the suite from a fresh checkout without installing
SRC = Path(__file__).resolve().parent.parent / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

# property tests share the machine with the heavy acceptance fixtures; wall
# clock deadlines would only add flakes
settings.register_profile("npmc", deadline=None)
settings.load_profile("npmc")
