import json
import logging
import math
import os
import platform
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from config import Config

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


def write_csv(frame: pd.DataFrame, path: Optional[str] = None) -> str:
    """写出 CSV, path 为空时写到标准输出"""
    if path is None:
        frame.to_csv(sys.stdout, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
        sys.stdout.flush()
        return ''
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    return path


def to_jsonable(value):
    """把 numpy 类型与非有限浮点数转换为 JSON 可表示的值 (非有限值写为 null)"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def collect_versions() -> Dict[str, str]:
    """工具与依赖版本"""
    import scipy
    import sklearn

    from plsaudit import __version__

    return {
        'plsaudit': __version__,
        'python': platform.python_version(),
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'pandas': pd.__version__,
        'scikit-learn': sklearn.__version__,
    }


@dataclass
class RunManifest:
    """每个输出文件的复现清单"""

    command: str
    config: dict
    seed: Optional[int] = None
    artifacts: Dict[str, List[str]] = field(default_factory=lambda: {'inputs': [], 'outputs': []})
    versions: Dict[str, str] = field(default_factory=collect_versions)
    created_at: str = field(default_factory=lambda: datetime.now().isoformat(timespec='seconds'))

    def add_input(self, path: str) -> None:
        self.artifacts['inputs'].append(path)

    def add_output(self, path: str) -> None:
        if path:
            self.artifacts['outputs'].append(path)

    def to_dict(self) -> dict:
        return to_jsonable(asdict(self))


class ReportWriter:
    """结果写出器: CSV 表格、JSON 摘要、复现清单与 Markdown 摘要"""

    def __init__(self, out: Optional[str] = None):
        """
        Args:
            out: 主 CSV 输出路径; 为空时表格写到标准输出, 不生成附属文件
        """
        self.out = out
        self.stem = os.path.splitext(out)[0] if out else None

    @property
    def to_stdout(self) -> bool:
        return self.out is None

    def sibling(self, suffix: str) -> Optional[str]:
        """与主输出同名的附属文件路径, 如 <stem>.summary.json"""
        return None if self.stem is None else f"{self.stem}{suffix}"

    def write_table(self, frame: pd.DataFrame) -> str:
        path = write_csv(frame, self.out)
        if path:
            logger.info(f"结果表已生成: {path} ({len(frame)} 行)")
        return path

    def write_json(self, payload: dict, path: Optional[str]) -> str:
        if path is None:
            return ''
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(to_jsonable(payload), f, ensure_ascii=False, indent=2)
            f.write('\n')
        logger.info(f"JSON 文件已生成: {path}")
        return path

    def write_summary(self, payload: dict) -> str:
        return self.write_json(payload, self.sibling('.summary.json'))

    def write_manifest(self, manifest: RunManifest) -> str:
        path = self.sibling('.manifest.json')
        if path is None:
            return ''
        manifest.add_output(path)
        return self.write_json(manifest.to_dict(), path)

    def generate_summary_markdown(self, title: str, frame: pd.DataFrame,
                                  description: str = '', tags: Optional[List[str]] = None) -> str:
        """生成带 YAML 头的 Markdown 摘要, 失败时返回空字符串"""
        path = self.sibling('.md')
        if path is None or not Config.WRITE_MARKDOWN:
            return ''
        try:
            content = self._generate_markdown_content(title, frame, description, tags or [])
            with open(path, 'w', encoding='utf-8') as f:
                f.write(content)
            logger.info(f"Markdown 摘要已生成: {path}")
            return path
        except Exception as e:
            logger.error(f"生成 Markdown 摘要失败: {e}")
            return ''

    def _generate_markdown_content(self, title: str, frame: pd.DataFrame,
                                   description: str, tags: List[str]) -> str:
        now = datetime.now()
        content = [
            "---",
            f"title: {title}",
            f"description: {description or title}",
            f"date: {now.strftime('%Y-%m-%d')}",
            "tags:",
            "  - plsaudit",
        ]
        content.extend(f"  - {tag}" for tag in tags)
        content.extend(["---", "", f"# {title}", ""])
        if description:
            content.extend([description, ""])
        content.append(self._generate_table(frame))
        return "\n".join(content)

    @staticmethod
    def _format_cell(value) -> str:
        if isinstance(value, (float, np.floating)):
            return f"{value:.4g}"
        if value is None:
            return ''
        return str(value)

    def _generate_table(self, frame: pd.DataFrame) -> str:
        columns = [str(c) for c in frame.columns]
        lines = [
            "| " + " | ".join(columns) + " |",
            "|" + "|".join("---" for _ in columns) + "|",
        ]
        for row in frame.itertuples(index=False):
            lines.append("| " + " | ".join(self._format_cell(v) for v in row) + " |")
        lines.append("")
        return "\n".join(lines)
