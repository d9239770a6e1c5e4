from setuptools import setup, find_packages

setup(name='stonet',
        version='0.1.0',
        description='Operator-learning surrogates for solute transport in fractured porous media',
        license='MIT',
        install_requires=[
            "torch>=1.13.1",
            "numpy>=1.22.4",
            "pyyaml>=5.3",
            "scipy>=1.12"
        ],
        dependency_links=[
            "https://download.pytorch.org/whl/cpu/"
        ],
        python_requires='>=3.9',
        include_package_data=True,
        package_data={
            'stonet': ['profiles/*.yaml', 'utils/templates/*.yaml']
        },
        entry_points={
            'console_scripts': ['stonet=stonet.cli:main']
        },
        packages=find_packages(exclude=['test', 'test.*']))
