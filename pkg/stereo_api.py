"""Stereo inference API. Settings come from NMRF_CHECKPOINT, NMRF_DEVICE and NMRF_OUTPUT_ROOT."""

import logging
import os

from nmrf.server import create_app

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

CHECKPOINT = os.getenv("NMRF_CHECKPOINT", "runs/toy/checkpoints/final.pt")
DEVICE = os.getenv("NMRF_DEVICE")
OUTPUT_ROOT = os.getenv("NMRF_OUTPUT_ROOT", "runs/serve")

app = create_app(CHECKPOINT, DEVICE, OUTPUT_ROOT)

if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=int(os.getenv("PORT", "8010")), log_level="info")
