"""Model lifecycle management: versioned data storage, lineage, run capture,
gated promotion, drift monitoring, automated tuning, and bundle deployment."""

__version__ = "0.1.0"

RUNTIME_NAME = "mmgr-runtime"
RUNTIME_VERSION = "1.0.0"
