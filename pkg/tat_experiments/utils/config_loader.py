import logging
from pathlib import Path
from typing import Union

import yaml
from pydantic import ValidationError

from config.exceptions import ConfigError
from tat_experiments.serializers.config_serializers import ExperimentConfig

logger = logging.getLogger(__name__)


class ConfigLoader:
    """YAML 실험 설정을 읽고 ExperimentConfig 로 검증하는 클래스"""

    def __init__(self, configs_dir: Union[str, Path, None] = None):
        # 앱 디렉토리의 configs 폴더가 기본 위치
        self.configs_dir = Path(configs_dir) if configs_dir else Path(__file__).parent.parent / 'configs'

    def resolve(self, name: Union[str, Path]) -> Path:
        """
        경로 또는 configs 폴더의 설정 이름을 파일 경로로 변환

        Raises:
            ConfigError: no such file ("config not found")
        """
        path = Path(name)
        candidates = [path]
        if not path.suffix:
            candidates.append(self.configs_dir / f"{path.name}.yaml")
        candidates.append(self.configs_dir / path.name)
        for candidate in candidates:
            if candidate.is_file():
                return candidate
        raise ConfigError(f"config not found: {name}")

    def load(self, name: Union[str, Path]) -> ExperimentConfig:
        """
        설정 파일을 읽어 검증된 ExperimentConfig 반환

        Raises:
            ConfigError: missing file, YAML syntax error, unknown keys or a
                violated invariant (the message names the offending field)
        """
        path = self.resolve(name)
        try:
            raw = yaml.safe_load(path.read_text(encoding='utf-8')) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: YAML syntax error: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping of sections")
        try:
            config = ExperimentConfig.model_validate(raw)
        except ValidationError as e:
            fields = ', '.join('.'.join(str(p) for p in err['loc']) or '<root>' for err in e.errors())
            raise ConfigError(f"{path}: invalid config ({fields}): {e}") from e
        logger.info(f"config loaded: {path}")
        return config

    def available(self) -> list:
        """configs 폴더의 설정 이름 목록"""
        return sorted(p.stem for p in self.configs_dir.glob('*.yaml'))


# 싱글톤 인스턴스 (모듈 레벨에서 재사용)
config_loader = ConfigLoader()


def load_experiment_config(name: Union[str, Path]) -> ExperimentConfig:
    """편의 함수: 설정 이름 또는 경로로 ExperimentConfig 로드"""
    return config_loader.load(name)


def available_configs() -> list:
    """편의 함수: 기본 설정 목록"""
    return config_loader.available()
