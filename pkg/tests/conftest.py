import sys
from pathlib import Path

# allow `import oracles` from any working directory
sys.path.insert(0, str(Path(__file__).parent))
