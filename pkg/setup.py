from setuptools import setup, find_packages

setup(
    name='warm-start-selection',
    version='0.1.0',
    packages=find_packages(exclude=['examples', 'examples.*']),
    include_package_data=True,
    install_requires=[
        'numpy', 'scipy'
    ],
    extras_require={
        'test': ['pytest', 'hypothesis'],
    },
    entry_points={
        'console_scripts': ['wssp=warm_start_selection.cli:main'],
    },
    description='Optimal multiple stopping with warm-started selection over repeated hiring rounds.',
    long_description=open('README.md').read(),
    long_description_content_type='text/markdown',
    classifiers=[
        'Programming Language :: Python :: 3',
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
    ],
    python_requires='>=3.8',
)
