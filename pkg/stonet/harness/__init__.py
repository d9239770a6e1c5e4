from stonet.harness.training import TrainConfig, TrainResult, final_window_loss, train
from stonet.harness.evaluation import Metrics, evaluate, write_metrics
from stonet.harness.sweep import SweepSpec, sweep
