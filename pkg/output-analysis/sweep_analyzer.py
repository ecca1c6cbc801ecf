import glob
import json
import os
from typing import Dict, List

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import pandas as pd


def read_reference_peaks(path: str) -> Dict[str, float]:
    """Peak F1 per variant from the `# reference_peak_f1=` header line, empty when the header is absent."""
    prefix = '# reference_peak_f1='
    with open(path) as f:
        for line in f:
            if not line.startswith('#'):
                break
            if line.startswith(prefix):
                pairs = (item.split(':') for item in line[len(prefix):].strip().split(';') if item)
                return {variant: float(value) for variant, value in pairs}
    return {}


class SweepAnalyzer:
    """
    Reads the metrics table and per-scene reports of a sweep run and plots precision, recall and F1 against lambda.
    """
    def __init__(self):
        self.metrics = ['precision_mean', 'recall_mean', 'f1_mean']
        self.colors = {'reward': 'tab:blue', 'agency': 'tab:green', 'hybrid': 'tab:orange', 'random': 'tab:gray'}
        self.reference_peak_f1: Dict[str, float] = {}

    def load_metrics(self, output_dir: str) -> pd.DataFrame:
        """
        Args:
            output_dir: output folder of a sweep run (holds metrics.csv)

        Returns:
            metrics table, lambda as float (NaN where not applicable)
        """
        path = os.path.join(output_dir, 'metrics.csv')
        self.reference_peak_f1 = read_reference_peaks(path)
        df = pd.read_csv(path, comment='#', na_values=['n/a'])
        df['lambda'] = pd.to_numeric(df['lambda'], errors='coerce')
        return df

    def load_reports(self, output_dir: str) -> pd.DataFrame:
        """One row per (cell, scene, candidate) with the candidate's dR and verdict."""
        rows: List[Dict] = []
        for path in sorted(glob.glob(os.path.join(output_dir, 'reports', '*', '*.json'))):
            with open(path) as f:
                report = json.load(f)
            cell = os.path.basename(os.path.dirname(path))
            for c in report['candidates']:
                rows.append({'cell': cell, 'scene_id': report['scene_id'],
                             'cause': c['cause']['agent_id'], 'effect': c['effect']['agent_id'],
                             'dR': c['dR'], 'accepted': c['accepted']})
        return pd.DataFrame(rows)

    def generate_report(self, metrics: pd.DataFrame, reports: pd.DataFrame, output_dir: str):
        os.makedirs(output_dir, exist_ok=True)

        summary = metrics.groupby('variant', sort=False)[self.metrics].agg(['mean', 'std', 'min', 'max'])
        summary.to_csv(os.path.join(output_dir, 'summary_statistics.csv'))

        if not reports.empty:
            summary = reports.groupby('cell').agg(candidates=('dR', 'size'), accepted=('accepted', 'sum'),
                                                  dR_mean=('dR', 'mean'), dR_std=('dR', 'std'),
                                                  dR_min=('dR', 'min'), dR_max=('dR', 'max'))
            summary.to_csv(os.path.join(output_dir, 'candidate_statistics.csv'))

        fig, axes = plt.subplots(1, 3, figsize=(15, 4.5), sharey=True)
        for ax, metric in zip(axes, self.metrics):
            for variant, g in metrics.groupby('variant', sort=False):
                color = self.colors.get(variant)
                if g['lambda'].notna().any():
                    g = g.sort_values('lambda')
                    ax.plot(g['lambda'], g[metric], marker='o', label=variant, color=color)
                else:
                    ax.axhline(g[metric].iloc[0], linestyle='--', label=variant, color=color)
            if metric == 'f1_mean':
                for variant, value in self.reference_peak_f1.items():
                    ax.axhline(value, linestyle=':', linewidth=0.8, color=self.colors.get(variant))
            ax.set_title(metric.replace('_mean', '').capitalize())
            ax.set_xlabel('lambda_dR')
            ax.set_ylim(0, 1.05)
        axes[0].set_ylabel('Macro average over scenes')
        axes[-1].legend()
        plt.tight_layout()
        plt.savefig(os.path.join(output_dir, 'sweep_metrics.png'))
        plt.close(fig)


def main():
    analyzer = SweepAnalyzer()

    # Replace with your sweep output path
    sweep_dir = "/path/to/the/result"
    output_dir = "/path/to/analysis_output"

    metrics = analyzer.load_metrics(sweep_dir)
    reports = analyzer.load_reports(sweep_dir)
    analyzer.generate_report(metrics, reports, output_dir)

    print("\nSweep Summary:")
    print("-" * 50)
    print(f"Scenes per cell: {int(metrics['n_scenes'].max()) if len(metrics) else 0}")
    for variant, g in metrics.groupby('variant', sort=False):
        best = g.loc[g['f1_mean'].idxmax()]
        lam = 'n/a' if pd.isna(best['lambda']) else f"{best['lambda']:g}"
        print(f"{variant}: peak F1 {best['f1_mean']:.3f} at lambda {lam}")


if __name__ == "__main__":
    main()
