import os
import subprocess
import sys
from pathlib import Path

from setuptools import setup
from setuptools.command.build_ext import build_ext
from setuptools.extension import Extension


class CMakeExtension(Extension):
    def __init__(self, name):
        super().__init__(name, sources=[])


class CMakeBuild(build_ext):
    def build_extension(self, ext):
        source_dir = Path(__file__).resolve().parent
        build_dir = Path(self.build_temp) / "cmake"
        build_dir.mkdir(parents=True, exist_ok=True)
        out_path = Path(self.get_ext_fullpath(ext.name)).resolve()
        out_path.parent.mkdir(parents=True, exist_ok=True)
        cfg = "Debug" if self.debug else "Release"
        subprocess.run(
            [
                "cmake",
                "-S",
                str(source_dir),
                "-B",
                str(build_dir),
                f"-DCMAKE_BUILD_TYPE={cfg}",
                f"-DPYTHON_EXECUTABLE={sys.executable}",
                f"-DPSDBP_MODULE_OUTPUT_DIR={out_path.parent}",
                "-DPSDBP_BUILD_TESTS=OFF",
            ],
            check=True,
        )
        jobs = os.cpu_count() or 1
        subprocess.run(
            ["cmake", "--build", str(build_dir), "--target", "_psdbp", "-j", str(jobs)],
            check=True,
        )


setup(
    ext_modules=[CMakeExtension("psdbp._psdbp")],
    cmdclass={"build_ext": CMakeBuild},
)
