import sys
from pathlib import Path

# Allow `from helpers import ...` regardless of the pytest invocation dir.
sys.path.insert(0, str(Path(__file__).parent))
